use std::fmt;

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::adtn::CompressedWeight;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer type and its hyper-parameters. Shapes exclude the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Linear { in_features: usize, out_features: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    MaxPool2d { size: usize, stride: usize },
    Relu,
    Flatten,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Linear { .. } | LayerKind::Conv2d { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerKind::Linear { in_features, out_features } => Some(vec![in_features, out_features]),
            LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => {
                Some(vec![out_channels, in_channels, kernel, kernel])
            }
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerKind::Linear { out_features, .. } => Some(vec![out_features]),
            LayerKind::Conv2d { out_channels, .. } => Some(vec![out_channels]),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Linear { in_features, .. } => in_features,
            LayerKind::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample `input` shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || NnError::Network(format!("{self} cannot take input of shape {input:?}"));
        match *self {
            LayerKind::Linear { in_features, out_features } => {
                (input == [in_features]).then(|| vec![out_features]).ok_or_else(bad)
            }
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let &[c, h, w] = input else { return Err(bad()) };
                if c != in_channels || h + 2 * padding < kernel || w + 2 * padding < kernel || stride == 0 {
                    return Err(bad());
                }
                Ok(vec![out_channels, (h + 2 * padding - kernel) / stride + 1, (w + 2 * padding - kernel) / stride + 1])
            }
            LayerKind::MaxPool2d { size, stride } => {
                let &[c, h, w] = input else { return Err(bad()) };
                if h < size || w < size || stride == 0 {
                    return Err(bad());
                }
                Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Linear { in_features, out_features } => write!(f, "linear({in_features}->{out_features})"),
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                write!(f, "conv2d({in_channels}->{out_channels}, k{kernel}, s{stride}, p{padding})")
            }
            LayerKind::MaxPool2d { size, stride } => write!(f, "maxpool2d({size}, s{stride})"),
            LayerKind::Relu => f.write_str("relu"),
            LayerKind::Flatten => f.write_str("flatten"),
        }
    }
}

/// Where a layer's weight comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource<T: Scalar> {
    Dense(Tensor<T>),
    Compressed(CompressedWeight<T>),
}

impl<T: Scalar> WeightSource<T> {
    pub fn dense(&self) -> Result<Tensor<T>> {
        match self {
            WeightSource::Dense(w) => Ok(w.clone()),
            WeightSource::Compressed(c) => Ok(c.reconstruct()?),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            WeightSource::Dense(w) => w.shape(),
            WeightSource::Compressed(c) => c.shape(),
        }
    }

    /// Scalars actually stored: the dense size, or ADTN plus residual counts.
    pub fn stored_count(&self) -> usize {
        match self {
            WeightSource::Dense(w) => w.len(),
            WeightSource::Compressed(c) => c.adtn_param_count() + c.residual_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar> {
    pub name: String,
    pub kind: LayerKind,
    pub weight: Option<WeightSource<T>>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// Weight and bias drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(name: impl Into<String>, kind: LayerKind, rng: &mut impl Rng) -> Self {
        let mut draw = |shape: Vec<usize>| {
            let bound = 1.0 / (kind.fan_in() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.sample(dist))).expect("non-empty shape")
        };
        let weight = kind.weight_shape().map(|s| WeightSource::Dense(draw(s)));
        let bias = kind.bias_shape().map(&mut draw);
        Layer { name: name.into(), kind, weight, bias }
    }

    pub fn is_compressed(&self) -> bool {
        matches!(self.weight, Some(WeightSource::Compressed(_)))
    }

    /// Parameters in the uncompressed layer.
    pub fn dense_param_count(&self) -> usize {
        self.kind.weight_shape().map_or(0, |s| s.iter().product())
            + self.kind.bias_shape().map_or(0, |s| s.iter().product::<usize>())
    }

    /// Parameters currently stored.
    pub fn stored_param_count(&self) -> usize {
        self.weight.as_ref().map_or(0, WeightSource::stored_count) + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// Role of a parameter within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamSlot {
    Weight,
    Bias,
    Adtn { chunk: usize, tensor: usize },
    Residual,
}

/// Identifies one parameter tensor of a [`Network`](super::Network).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub layer: usize,
    pub slot: ParamSlot,
}

impl ParamKey {
    pub fn is_adtn(&self) -> bool {
        matches!(self.slot, ParamSlot::Adtn { .. })
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            ParamSlot::Weight => write!(f, "layer{}.weight", self.layer),
            ParamSlot::Bias => write!(f, "layer{}.bias", self.layer),
            ParamSlot::Adtn { chunk, tensor } => write!(f, "layer{}.adtn{chunk}.t{tensor}", self.layer),
            ParamSlot::Residual => write!(f, "layer{}.residual", self.layer),
        }
    }
}

/// Which parameters receive gradients. `uncompressed` covers dense
/// weights, biases and residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamFilter {
    pub adtn: bool,
    pub uncompressed: bool,
}

impl ParamFilter {
    pub const ALL: ParamFilter = ParamFilter { adtn: true, uncompressed: true };
    pub const ADTN_ONLY: ParamFilter = ParamFilter { adtn: true, uncompressed: false };
    pub const NONE: ParamFilter = ParamFilter { adtn: false, uncompressed: false };

    pub fn admits(&self, key: &ParamKey) -> bool {
        if key.is_adtn() {
            self.adtn
        } else {
            self.uncompressed
        }
    }
}
