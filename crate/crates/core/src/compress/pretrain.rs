use serde::{Deserialize, Serialize};

use super::{CompressError, Result};
use crate::adtn::Adtn;
use crate::autodiff::Tape;
use crate::nn::{Optimizer, OptimizerConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Objective minimised in stage 1. The reported loss is always the plain
/// Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossForm {
    #[default]
    Norm,
    Squared,
}

/// On a plateau, multiply the learning rate by `factor` instead of
/// stopping, until it would fall below `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauDecay {
    pub factor: f64,
    pub min_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub max_steps: usize,
    /// Steps over which the best loss must improve.
    pub window: usize,
    /// Minimum relative improvement of the best loss over `window` steps.
    pub rel_tol: f64,
    pub optimizer: OptimizerConfig,
    pub loss: LossForm,
    pub decay: Option<PlateauDecay>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            max_steps: 5000,
            window: 50,
            rel_tol: 1e-4,
            optimizer: OptimizerConfig::adam(1e-3),
            loss: LossForm::Norm,
            decay: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(CompressError::Config("pretrain window must be positive".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 || self.optimizer.lr.is_nan() || self.optimizer.lr < 0.0 {
            return Err(CompressError::Config("pretrain rel_tol and lr must be non-negative".into()));
        }
        if let Some(d) = self.decay {
            if !(d.factor > 0.0 && d.factor < 1.0) || d.min_lr.is_nan() || d.min_lr <= 0.0 {
                return Err(CompressError::Config("decay factor must lie in (0, 1) and min_lr be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    /// Euclidean loss of the current tensors at every evaluated step.
    pub curve: Vec<f64>,
    pub best_loss: f64,
    pub best_step: usize,
    pub target_norm: f64,
    /// True if the window criterion fired before `max_steps`.
    pub converged: bool,
}

impl PretrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.curve.first().copied().unwrap_or(f64::NAN)
    }

    /// Best loss relative to the target norm.
    pub fn relative(&self) -> f64 {
        if self.target_norm == 0.0 {
            self.best_loss
        } else {
            self.best_loss / self.target_norm
        }
    }

    /// Running minimum of the curve.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.curve
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

/// Stage 1: fits `adtn` to `target` (flattened row-major) by gradient
/// descent on the Euclidean distance. On return `adtn` holds the best
/// tensors seen.
pub fn pretrain<T: Scalar>(adtn: &mut Adtn<T>, target: &Tensor<T>, config: &PretrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    let expected = adtn.spec().encoded_size();
    if target.len() != expected {
        return Err(CompressError::TargetSize { expected, actual: target.len() });
    }
    let target = target.flatten();
    let target_norm = target.norm2().to_f64().unwrap_or(f64::NAN);

    let mut opt: Optimizer<usize, T> = Optimizer::new(config.optimizer);
    let mut curve = Vec::new();
    let mut best_curve: Vec<f64> = Vec::new();
    let mut best = (f64::INFINITY, 0, adtn.tensors().to_vec());
    let mut converged = false;
    let mut plateau_from = 0;

    for step in 0..config.max_steps {
        let tape = Tape::new();
        let gates: Vec<_> = adtn.tensors().iter().map(|t| tape.param(t.clone())).collect();
        let encoded = adtn.contract_on(&tape, &gates)?;
        let diff = encoded.sub(tape.constant(target.clone())).map_err(crate::adtn::AdtnError::from)?;
        let distance = diff.value().norm2().to_f64().unwrap_or(f64::NAN);
        if !distance.is_finite() {
            adtn.tensors_mut().clone_from_slice(&best.2);
            return Err(CompressError::NonFinite { step, loss: distance });
        }
        curve.push(distance);
        if distance < best.0 {
            best = (distance, step, adtn.tensors().to_vec());
        }
        best_curve.push(best.0);
        if best.0 == 0.0 {
            converged = true;
            break;
        }
        if step >= plateau_from + config.window {
            let before = best_curve[step - config.window];
            if (before - best.0) / before < config.rel_tol {
                let lr = opt.config().lr;
                match config.decay {
                    Some(d) if lr * d.factor >= d.min_lr => {
                        opt.set_lr(lr * d.factor);
                        plateau_from = step;
                    }
                    _ => {
                        converged = true;
                        break;
                    }
                }
            }
        }

        let loss = match config.loss {
            LossForm::Norm => diff.norm2(),
            LossForm::Squared => diff.mul(diff).map_err(crate::adtn::AdtnError::from)?.sum(),
        };
        let mut grads = tape.backward(loss).map_err(crate::adtn::AdtnError::from)?;
        let grads = gates.iter().enumerate().filter_map(|(i, &v)| grads.take(v).map(|g| (i, g))).collect();
        opt.step(adtn.tensors_mut().iter_mut().enumerate(), &grads).map_err(crate::nn::NnError::from)?;
    }

    let (best_loss, best_step, tensors) = best;
    adtn.tensors_mut().clone_from_slice(&tensors);
    Ok(PretrainOutcome { curve, best_loss, best_step, target_norm, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adtn::{build_brick_wall, Activation, AdtnSpec, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn fixed_point_stays_at_zero() {
        let spec = AdtnSpec::new(6, 2, 2, Activation::Relu);
        let mut adtn: Adtn<f64> = build_brick_wall(spec, 3).unwrap();
        let target = adtn.contract().unwrap().into_flat();
        let before = adtn.clone();
        let out = pretrain(&mut adtn, &target, &PretrainConfig::default()).unwrap();
        assert_eq!(out.best_loss, 0.0);
        assert_eq!(out.curve, vec![0.0]);
        assert_eq!(adtn, before);
    }

    #[test]
    fn gaussian_target_improves_on_initialisation() {
        let spec = AdtnSpec::new(10, 2, 1, Activation::Relu);
        let mut adtn: Adtn<f64> = build_brick_wall(spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = Tensor::from_fn(vec![1024], |_| StandardNormal.sample(&mut rng)).unwrap();
        let cfg = PretrainConfig { max_steps: 300, ..PretrainConfig::default() };
        let out = pretrain(&mut adtn, &target, &cfg).unwrap();
        assert!(out.best_loss < out.initial_loss());
        let best = out.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        let now = adtn.contract().unwrap().into_flat().sub(&target).unwrap().norm2();
        assert_eq!(now, out.best_loss);
    }

    #[test]
    fn realizable_target_is_approached() {
        let spec = AdtnSpec::new(6, 2, 1, Activation::Relu);
        let hidden: Adtn<f64> = Adtn::build(spec, Init::NearIdentity { noise: 0.3 }, 11).unwrap();
        let target = hidden.contract().unwrap().into_flat();
        let mut adtn: Adtn<f64> = build_brick_wall(spec, 12).unwrap();
        let out = pretrain(&mut adtn, &target, &PretrainConfig { optimizer: OptimizerConfig::adam(1e-2), ..Default::default() })
            .unwrap();
        assert!(out.relative() < 0.05, "relative loss {}", out.relative());
    }

    #[test]
    fn wrong_target_size_is_rejected() {
        let mut adtn: Adtn<f64> = build_brick_wall(AdtnSpec::new(4, 2, 1, Activation::Relu), 0).unwrap();
        let target = Tensor::from_vec(vec![0.0; 15]);
        assert!(matches!(
            pretrain(&mut adtn, &target, &PretrainConfig::default()),
            Err(CompressError::TargetSize { expected: 16, actual: 15 })
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut adtn: Adtn<f64> = build_brick_wall(AdtnSpec::new(4, 2, 1, Activation::Relu), 0).unwrap();
        let mut target = Tensor::from_vec(vec![0.0; 16]);
        target.data_mut()[3] = f64::NAN;
        assert!(matches!(pretrain(&mut adtn, &target, &PretrainConfig::default()), Err(CompressError::NonFinite { step: 0, .. })));
    }
}
