use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::functional::cross_entropy;
use super::{Network, NnError, Optimizer, OptimizerConfig, ParamFilter, ParamKey, Result};
use crate::autodiff::Tape;
use crate::data::{batches, sequential_batches, Dataset};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 5, batch_size: 64, optimizer: OptimizerConfig::default(), eval_batch_size: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's mini-batches.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochMetrics>,
}

impl History {
    pub fn last_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_accuracy)
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e)?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "train_loss", "train_accuracy", "test_accuracy", "seconds"])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Index of the largest entry of each row; ties go to the first.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = *logits.shape().last().expect("order >= 1");
    logits
        .data()
        .chunks(classes)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
        .collect()
}

/// Fraction of `ds` classified correctly.
pub fn evaluate<T: Scalar>(net: &Network<T>, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let weights = net.materialized()?;
    let mut correct = 0usize;
    for batch in sequential_batches(ds, batch_size) {
        let logits = net.logits_with(&weights, &batch.images.cast())?;
        correct += argmax_rows(&logits).iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mini-batch training of the parameters admitted by `filter` under
/// softmax cross entropy. Batch order for epoch `e` is drawn from
/// `derive_seed(seed, "batches", e)`.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    filter: ParamFilter,
    seed: u64,
) -> Result<History> {
    if train_set.sample_shape() != net.input_shape() {
        return Err(NnError::Network(format!(
            "dataset samples have shape {:?}, network expects {:?}",
            train_set.sample_shape(),
            net.input_shape()
        )));
    }
    let mut opt: Optimizer<ParamKey, T> = Optimizer::new(config.optimizer);
    let mut history = History::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (bi, batch) in batches(train_set, config.batch_size, derive_seed(seed, "batches", epoch as u64)).enumerate() {
            let tape = Tape::new();
            let x = tape.constant(batch.images.cast());
            let fwd = net.forward(&tape, x, filter)?;
            let loss = cross_entropy(fwd.logits, &batch.labels)?;
            let value = loss.value().item().to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(NnError::NonFinite { loss: value, epoch, batch: bi });
            }
            let n = batch.labels.len();
            loss_sum += value * n as f64;
            seen += n;
            correct += argmax_rows(&fwd.logits.value()).iter().zip(&batch.labels).filter(|(p, l)| p == l).count();

            let mut grads = tape.backward(loss)?;
            let grads: HashMap<ParamKey, Tensor<T>> =
                fwd.bindings.iter().filter_map(|&(k, v)| grads.take(v).map(|g| (k, g))).collect();
            opt.step(net.params_mut(filter), &grads)?;
        }
        let test_accuracy = test_set.map(|ds| evaluate(net, ds, config.eval_batch_size)).transpose()?;
        history.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            test_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}
