//! Layers, networks, optimizers and the training loop.

pub mod functional;
mod layer;
mod models;
mod network;
mod optim;
mod train;

use thiserror::Error;

use crate::adtn::AdtnError;
use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::tensor::TensorError;

pub use layer::{Layer, LayerKind, ParamFilter, ParamKey, ParamSlot, WeightSource};
pub use models::{build_model, ModelId};
pub use network::{Forward, Network};
pub use optim::{OptimError, Optimizer, OptimizerConfig, OptimizerKind};
pub use train::{argmax_rows, evaluate, train, EpochMetrics, History, TrainConfig};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Adtn(#[from] AdtnError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Optim(#[from] OptimError),

    #[error("network: {0}")]
    Network(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { loss: f64, epoch: usize, batch: usize },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
