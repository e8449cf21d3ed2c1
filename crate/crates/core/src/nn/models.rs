use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Layer, LayerKind, Network, NnError, Result};
use crate::scalar::Scalar;

/// Architectures available by name. `fc2` is FC-2 (784-256-10 on MNIST);
/// `lenet5-mnist` is LeNet-5 with a 120-84-10 classifier head. A `@s`
/// suffix sets the hidden width (FC-2) or the first linear layer's output
/// width (LeNet-5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelId {
    Fc2 { hidden: usize },
    Lenet5Mnist { fc1_out: usize },
}

impl ModelId {
    pub const FC2: ModelId = ModelId::Fc2 { hidden: 256 };
    pub const LENET5_MNIST: ModelId = ModelId::Lenet5Mnist { fc1_out: 84 };
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModelId::Fc2 { hidden: 256 } => f.write_str("fc2"),
            ModelId::Fc2 { hidden } => write!(f, "fc2@{hidden}"),
            ModelId::Lenet5Mnist { fc1_out: 84 } => f.write_str("lenet5-mnist"),
            ModelId::Lenet5Mnist { fc1_out } => write!(f, "lenet5-mnist@{fc1_out}"),
        }
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (base, width) = match s.split_once('@') {
            Some((b, w)) => {
                let w: usize = w.parse().map_err(|_| format!("bad width in model name {s:?}"))?;
                if w == 0 {
                    return Err(format!("zero width in model name {s:?}"));
                }
                (b, Some(w))
            }
            None => (s, None),
        };
        match base {
            "fc2" => Ok(ModelId::Fc2 { hidden: width.unwrap_or(256) }),
            "lenet5-mnist" => Ok(ModelId::Lenet5Mnist { fc1_out: width.unwrap_or(84) }),
            _ => Err(format!("unknown model {s:?}; expected fc2 or lenet5-mnist (optionally @width)")),
        }
    }
}

impl TryFrom<String> for ModelId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.to_string()
    }
}

/// Freshly initialised network for samples of shape `input_shape`.
pub fn build_model<T: Scalar>(model: ModelId, input_shape: &[usize], classes: usize, seed: u64) -> Result<Network<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |name: &str, kind| Layer::init(name, kind, &mut rng);
    let linear = |i, o| LayerKind::Linear { in_features: i, out_features: o };
    let conv = |i, o, padding| LayerKind::Conv2d { in_channels: i, out_channels: o, kernel: 5, stride: 1, padding };
    let pool = LayerKind::MaxPool2d { size: 2, stride: 2 };
    let layers = match model {
        ModelId::Fc2 { hidden } => {
            let features = input_shape.iter().product();
            vec![
                layer("flatten", LayerKind::Flatten),
                layer("fc1", linear(features, hidden)),
                layer("relu1", LayerKind::Relu),
                layer("fc2", linear(hidden, classes)),
            ]
        }
        ModelId::Lenet5Mnist { fc1_out } => {
            let channels = *input_shape
                .first()
                .ok_or_else(|| NnError::Network("LeNet-5 needs [channels, height, width] input".into()))?;
            vec![
                layer("conv1", conv(channels, 6, 2)),
                layer("relu1", LayerKind::Relu),
                layer("pool1", pool),
                layer("conv2", conv(6, 16, 0)),
                layer("relu2", LayerKind::Relu),
                layer("pool2", pool),
                layer("conv3", conv(16, 120, 0)),
                layer("flatten", LayerKind::Flatten),
                layer("fc1", linear(120, fc1_out)),
                layer("relu3", LayerKind::Relu),
                layer("fc2", linear(fc1_out, classes)),
            ]
        }
    };
    Network::new(input_shape.to_vec(), layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in ["fc2", "fc2@64", "lenet5-mnist", "lenet5-mnist@32"] {
            assert_eq!(s.parse::<ModelId>().unwrap().to_string(), s);
        }
        assert_eq!("fc2@256".parse::<ModelId>().unwrap(), ModelId::FC2);
        for bad in ["mlp", "fc2@", "fc2@0", "lenet5@x"] {
            assert!(bad.parse::<ModelId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn fc2_shapes() {
        let net: Network<f32> = build_model(ModelId::FC2, &[1, 28, 28], 10, 0).unwrap();
        assert_eq!(net.layer_shapes().unwrap(), vec![vec![784], vec![256], vec![256], vec![10]]);
        assert_eq!(net.dense_param_count(), 784 * 256 + 256 + 256 * 10 + 10);
    }

    #[test]
    fn lenet_intermediate_shapes() {
        let net: Network<f32> = build_model(ModelId::LENET5_MNIST, &[1, 28, 28], 10, 0).unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![6, 28, 28],
            vec![6, 28, 28],
            vec![6, 14, 14],
            vec![16, 10, 10],
            vec![16, 10, 10],
            vec![16, 5, 5],
            vec![120, 1, 1],
            vec![120],
            vec![84],
            vec![84],
            vec![10],
        ];
        assert_eq!(net.layer_shapes().unwrap(), expected);
        assert!(build_model::<f32>(ModelId::LENET5_MNIST, &[1, 20, 20], 10, 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a: Network<f64> = build_model(ModelId::FC2, &[1, 28, 28], 10, 7).unwrap();
        let b: Network<f64> = build_model(ModelId::FC2, &[1, 28, 28], 10, 7).unwrap();
        let c: Network<f64> = build_model(ModelId::FC2, &[1, 28, 28], 10, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 784f64.sqrt();
        let (_, w) = a.params()[0];
        assert!(w.max_abs() <= bound);
        assert!(w.max_abs() > 0.9 * bound);
    }
}
