use std::collections::HashMap;
use std::fmt::Display;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("no gradient for parameter {0}")]
    MissingGrad(String),

    #[error("parameter {key} has shape {param:?} but its gradient has {grad:?}")]
    ShapeMismatch { key: String, param: Vec<usize>, grad: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, ..OptimizerConfig::adam(lr) }
    }
}

/// First-order optimizer with per-parameter state keyed by `K`.
#[derive(Debug, Clone)]
pub struct Optimizer<K, T: Scalar> {
    config: OptimizerConfig,
    steps: u64,
    moments: HashMap<K, (Vec<T>, Vec<T>)>,
}

impl<K: Clone + Eq + Hash + Display, T: Scalar> Optimizer<K, T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, steps: 0, moments: HashMap::new() }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Changes the learning rate; moment estimates are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter in `params` from `grads`.
    pub fn step<'p>(
        &mut self,
        params: impl IntoIterator<Item = (K, &'p mut Tensor<T>)>,
        grads: &HashMap<K, Tensor<T>>,
    ) -> Result<(), OptimError>
    where
        T: 'p,
    {
        let params: Vec<_> = params.into_iter().collect();
        for (key, p) in &params {
            let g = grads.get(key).ok_or_else(|| OptimError::MissingGrad(key.to_string()))?;
            if g.shape() != p.shape() {
                return Err(OptimError::ShapeMismatch {
                    key: key.to_string(),
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
        }
        self.steps += 1;
        let c = self.config;
        let lr = T::from_f64_lossy(c.lr);
        match c.kind {
            OptimizerKind::Sgd => {
                for (key, p) in params {
                    for (x, &g) in p.data_mut().iter_mut().zip(grads[&key].data()) {
                        *x -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let step_size = T::from_f64_lossy(c.lr / (1.0 - c.beta1.powi(t)));
                let v_correction = T::from_f64_lossy(1.0 / (1.0 - c.beta2.powi(t)));
                let (b1, b2, eps) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2), T::from_f64_lossy(c.eps));
                let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
                for (key, p) in params {
                    let g = grads[&key].data();
                    let (m, v) = self
                        .moments
                        .entry(key)
                        .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
                    for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + one_b1 * gi;
                        *vi = b2 * *vi + one_b2 * gi * gi;
                        *x -= step_size * *mi / ((*vi * v_correction).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
