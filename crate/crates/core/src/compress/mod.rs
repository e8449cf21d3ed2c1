//! Two-stage compression: fit ADTNs to existing weights under the
//! Euclidean distance, then fine-tune the network end to end under the
//! task loss with weights rebuilt from the ADTNs on every step.

mod experiments;
mod pretrain;
mod report;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adtn::{plan_partition_capped, Activation, Adtn, AdtnError, AdtnSpec, CompressedWeight, Init, DEFAULT_MIN_CHUNK};
use crate::data::{DataError, Dataset};
use crate::nn::{evaluate, train, History, Network, NnError, OptimizerConfig, ParamFilter, TrainConfig, WeightSource};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub use experiments::{faithfulness_curve, rows_to_csv, sweep_overparam, FaithfulnessRow, Protocol, SweepRow};
pub use pretrain::{pretrain, LossForm, PlateauDecay, PretrainConfig, PretrainOutcome};
pub use report::{ratio, total_ratio, total_ratio_approx, ChunkFit, CompressionReport, LayerReport, ParamCounts};

#[derive(Debug, Error)]
pub enum CompressError {
    #[error(transparent)]
    Adtn(#[from] AdtnError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("non-finite Euclidean loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },

    #[error("target has {actual} entries, ADTN encodes {expected}")]
    TargetSize { expected: usize, actual: usize },

    #[error("unknown layer {0:?}")]
    UnknownLayer(String),

    #[error("layer {0:?} has no weight to compress")]
    NoWeight(String),

    #[error("layer {0:?} is already compressed")]
    AlreadyCompressed(String),

    #[error("ratio of {numerator} to zero parameters")]
    ZeroDenominator { numerator: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = CompressError> = std::result::Result<T, E>;

/// Order in which several layers are compressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CompressionOrder {
    /// Nearest the output first.
    #[default]
    Backward,
    /// Nearest the input first.
    Forward,
}

impl fmt::Display for CompressionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompressionOrder::Backward => "backward",
            CompressionOrder::Forward => "forward",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Keep dense weights, biases and residuals fixed; only ADTN tensors move.
    pub freeze_uncompressed: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { epochs: 3, batch_size: 64, optimizer: OptimizerConfig::adam(1e-4), freeze_uncompressed: false }
    }
}

impl FinetuneConfig {
    pub fn filter(&self) -> ParamFilter {
        ParamFilter { adtn: true, uncompressed: !self.freeze_uncompressed }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, optimizer: self.optimizer, ..TrainConfig::default() }
    }
}

/// Settings shared by every compressed layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionConfig {
    /// Line dimension.
    pub d: usize,
    /// TN layers per ADTN.
    pub m: usize,
    pub activation: Activation,
    pub min_chunk: usize,
    /// Upper bound on ADTNs per layer; the greedy plan is truncated.
    pub max_chunks: Option<usize>,
    /// Std of the Gaussian noise added to the identity initialisation.
    pub init_noise: f64,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// Record a failing layer in the report and move on instead of aborting.
    pub continue_on_error: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            d: 2,
            m: 1,
            activation: Activation::Relu,
            min_chunk: DEFAULT_MIN_CHUNK,
            max_chunks: None,
            init_noise: 0.01,
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            continue_on_error: false,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        AdtnSpec::new(2, self.d, self.m, self.activation).validate()?;
        if self.max_chunks == Some(0) {
            return Err(CompressError::Config("max_chunks must be at least 1".into()));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(CompressError::Config(format!("init_noise {} must be finite and non-negative", self.init_noise)));
        }
        self.pretrain.validate()?;
        if self.finetune.batch_size == 0 {
            return Err(CompressError::Config("finetune batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Stage 2: end-to-end training of the ADTN tensors (and, unless frozen,
/// every uncompressed parameter) under cross entropy.
pub fn finetune<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<History> {
    Ok(train(net, train_set, test_set, &config.train_config(), config.filter(), seed)?)
}

/// Replaces the weight of layer `index` by ADTNs fitted with stage 1.
/// Returns the per-chunk fit summaries.
pub fn compress_layer<T: Scalar>(
    net: &mut Network<T>,
    index: usize,
    config: &CompressionConfig,
    seed: u64,
) -> Result<Vec<ChunkFit>> {
    let layer = net.layer(index).ok_or_else(|| CompressError::UnknownLayer(index.to_string()))?;
    let weight = match &layer.weight {
        Some(WeightSource::Dense(w)) => w.clone(),
        Some(WeightSource::Compressed(_)) => return Err(CompressError::AlreadyCompressed(layer.name.clone())),
        None => return Err(CompressError::NoWeight(layer.name.clone())),
    };
    let plan = plan_partition_capped(weight.len(), config.d, config.min_chunk, config.max_chunks);
    let template = AdtnSpec::new(2, config.d, config.m, config.activation);
    let init = Init::NearIdentity { noise: config.init_noise };
    let mut compressed = CompressedWeight::from_dense(
        &weight,
        plan.clone(),
        |chunk, spec| Adtn::build(spec, init, derive_seed(seed, "adtn-init", chunk as u64)),
        template,
    )?;
    let mut fits = Vec::with_capacity(plan.chunks.len());
    for (adtn, chunk) in compressed.adtns_mut().iter_mut().zip(&plan.chunks) {
        let target = weight.slice_flat(chunk.offset, chunk.len).map_err(AdtnError::from)?;
        let start = Instant::now();
        let outcome = pretrain(adtn, &target, &config.pretrain)?;
        fits.push(ChunkFit::new(chunk.q, &outcome, start.elapsed().as_secs_f64()));
    }
    net.set_weight(index, WeightSource::Compressed(compressed))?;
    Ok(fits)
}

/// Data handed to the multi-layer pipeline.
pub struct Datasets<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// Layer-by-layer compression. Each new layer is fitted (stage 1), then
/// the ADTNs of this and all previously compressed layers are fine-tuned
/// together (stage 2).
pub fn compress_network<T: Scalar>(
    net: &mut Network<T>,
    layer_names: &[String],
    order: CompressionOrder,
    config: &CompressionConfig,
    data: Datasets<'_>,
    seed: u64,
) -> Result<CompressionReport> {
    config.validate()?;
    let nn_params = net.dense_param_count();
    let eta_nn = evaluate(net, data.test, 1000)?;

    let mut indices = layer_names
        .iter()
        .map(|name| net.layer_index(name).ok_or_else(|| CompressError::UnknownLayer(name.clone())))
        .collect::<Result<Vec<_>>>()?;
    indices.sort_unstable();
    indices.dedup();
    if order == CompressionOrder::Backward {
        indices.reverse();
    }

    let mut layers = Vec::with_capacity(indices.len());
    for (step, &index) in indices.iter().enumerate() {
        let name = net.layers()[index].name.clone();
        let mut row = LayerReport::new(&name, index);
        let snapshot = net.clone();
        let start = Instant::now();
        let outcome = compress_layer(net, index, config, derive_seed(seed, "layer", index as u64)).and_then(|fits| {
            row.stage1_seconds = start.elapsed().as_secs_f64();
            row.record_layer(&net.layers()[index], fits);
            row.accuracy_after_pretrain = Some(evaluate(net, data.test, 1000)?);
            let start = Instant::now();
            let history = finetune(net, data.train, None, &config.finetune, derive_seed(seed, "finetune", step as u64))?;
            row.stage2_seconds = start.elapsed().as_secs_f64();
            row.finetune_loss = history.epochs.last().map(|e| e.train_loss);
            row.accuracy_after_finetune = Some(evaluate(net, data.test, 1000)?);
            Ok(())
        });
        if let Err(e) = outcome {
            if !config.continue_on_error {
                return Err(e);
            }
            *net = snapshot;
            row.error = Some(e.to_string());
        }
        layers.push(row);
    }

    let eta = evaluate(net, data.test, 1000)?;
    let eta_train = evaluate(net, data.train, 1000)?;
    let counts = ParamCounts::of(net, nn_params);
    Ok(CompressionReport {
        order,
        m: config.m,
        eta_nn,
        eta,
        eta_train,
        counts,
        rho_tot: total_ratio(&counts)?,
        rho_tot_approx: total_ratio_approx(&counts)?,
        n_adtns: layers.iter().map(|l| l.n_adtns).sum(),
        layers,
    })
}
