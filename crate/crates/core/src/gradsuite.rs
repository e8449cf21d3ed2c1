//! Finite-difference checks of every differentiable piece, grouped by scope.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adtn::{plan_partition, Activation, Adtn, AdtnSpec, CompressedWeight, Init};
use crate::autodiff::{self, gradcheck_with, GradcheckOptions, GradcheckReport, Tape, Var};
use crate::nn::functional::{conv2d, cross_entropy, linear, maxpool2d};
use crate::nn::{build_model, Layer, LayerKind, ModelId, Network, NnError, ParamFilter, WeightSource};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every tape primitive on its own.
    Ops,
    /// Euclidean loss of brick-wall contractions, `q <= 6`.
    Adtn,
    /// Cross entropy of small dense, conv and compressed networks.
    Net,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Adtn, Scope::Net];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Adtn => "adtn",
            Scope::Net => "net",
        })
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ops" => Ok(Scope::Ops),
            "adtn" => Ok(Scope::Adtn),
            "net" => Ok(Scope::Net),
            _ => Err(format!("unknown gradcheck scope {s:?}; expected ops, adtn or net")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Case {
    pub scope: Scope,
    pub name: String,
    pub report: GradcheckReport,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Names of the primitives covered by [`Scope::Ops`].
pub const PRIMITIVES: [&str; 15] = [
    "contract",
    "reshape",
    "permute",
    "relu",
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "norm2",
    "concat",
    "add_bias",
    "conv2d",
    "maxpool2d",
    "softmax_cross_entropy",
];

/// Entries with magnitude in `[0.1, 1.1)`, random sign: far from ReLU kinks.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = 0.1 + rng.random::<f64>();
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
    .expect("non-empty shape")
}

/// `sum(y * c)` for a fixed random `c`, so every output entry gets a
/// distinct cotangent.
fn probe<'t>(y: Var<'t, f64>, seed: u64) -> autodiff::Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = away_from_zero(&y.shape(), &mut rng);
    Ok(y.mul(y.tape().constant(c))?.sum())
}

type Loss = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> autodiff::Result<Var<'t, f64>>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Loss, Vec<Tensor<f64>>)> {
    let mut t = |shape: &[usize]| away_from_zero(shape, rng);
    vec![
        ("contract", Box::new(|_, v| probe(v[0].contract(v[1], &[1, 2], &[2, 0])?, 1)), vec![t(&[2, 3, 4]), t(&[4, 5, 3])]),
        ("reshape", Box::new(|_, v| probe(v[0].reshape(vec![6, 2])?, 2)), vec![t(&[2, 3, 2])]),
        ("permute", Box::new(|_, v| probe(v[0].permute(&[2, 0, 1])?, 3)), vec![t(&[2, 3, 4])]),
        ("relu", Box::new(|_, v| probe(v[0].relu(), 4)), vec![t(&[3, 4])]),
        ("add", Box::new(|_, v| probe(v[0].add(v[1])?, 5)), vec![t(&[3, 2]), t(&[3, 2])]),
        ("sub", Box::new(|_, v| probe(v[0].sub(v[1])?, 6)), vec![t(&[3, 2]), t(&[3, 2])]),
        ("mul", Box::new(|_, v| probe(v[0].mul(v[1])?, 7)), vec![t(&[3, 2]), t(&[3, 2])]),
        ("scale", Box::new(|_, v| probe(v[0].scale(-1.7), 8)), vec![t(&[5])]),
        ("sum", Box::new(|_, v| Ok(v[0].sum().scale(0.3))), vec![t(&[2, 3])]),
        ("norm2", Box::new(|_, v| Ok(v[0].norm2())), vec![t(&[7])]),
        ("concat", Box::new(|_, v| probe(Var::concat(&[v[0], v[1]])?, 9)), vec![t(&[3]), t(&[4])]),
        ("add_bias", Box::new(|_, v| probe(linear(v[0], v[1], Some(v[2]))?, 10)), vec![t(&[3, 4]), t(&[4, 2]), t(&[2])]),
        ("conv2d", Box::new(|_, v| probe(conv2d(v[0], v[1], v[2], 2, 1)?, 11)), vec![t(&[2, 2, 5, 5]), t(&[3, 2, 3, 3]), t(&[3])]),
        ("maxpool2d", Box::new(|_, v| probe(maxpool2d(v[0], 2, 2)?, 12)), vec![t(&[2, 1, 4, 6])]),
        ("softmax_cross_entropy", Box::new(|_, v| cross_entropy(v[0], &[2, 0, 1])), vec![t(&[3, 4])]),
    ]
}

fn adtn_case(spec: AdtnSpec, seed: u64, options: GradcheckOptions) -> Result<GradcheckReport, NnError> {
    let adtn: Adtn<f64> = Adtn::build(spec, Init::Gaussian { std: 0.5 }, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xadd);
    let target = away_from_zero(&[spec.encoded_size()], &mut rng);
    let report = gradcheck_with(
        |tape, gates| {
            let encoded = adtn.contract_on(tape, gates).map_err(|e| match e {
                crate::adtn::AdtnError::Autodiff(a) => a,
                crate::adtn::AdtnError::Tensor(t) => t.into(),
                other => panic!("wiring validated at build time: {other}"),
            })?;
            Ok(encoded.sub(tape.constant(target.clone()))?.norm2())
        },
        adtn.tensors(),
        options,
    )?;
    Ok(report)
}

fn net_report(net: &Network<f64>, x: &Tensor<f64>, labels: &[usize], options: GradcheckOptions) -> Result<GradcheckReport, NnError> {
    // surface shape errors here; the closure below can then only fail inside the tape
    let tape = Tape::new();
    net.forward(&tape, tape.constant(x.clone()), ParamFilter::ALL)?;
    let report = gradcheck_with(
        |tape, vars| {
            let logits = net
                .forward_with_vars(tape, tape.constant(x.clone()), ParamFilter::ALL, vars)
                .map_err(|e| match e {
                    NnError::Autodiff(a) => a,
                    NnError::Tensor(t) => t.into(),
                    other => panic!("forward validated above: {other}"),
                })?;
            cross_entropy(logits, labels)
        },
        &net.trainable_values(ParamFilter::ALL),
        options,
    )?;
    Ok(report)
}

fn net_cases(options: GradcheckOptions) -> Result<Vec<(String, GradcheckReport)>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = away_from_zero(&[4, 1, 2, 3], &mut rng);
    let labels = [0, 2, 1, 2];
    let dense: Network<f64> = build_model(ModelId::Fc2 { hidden: 5 }, &[1, 2, 3], 3, 3)?;
    let mut out = vec![("fc2 two-layer".to_string(), net_report(&dense, &x, &labels, options)?)];

    let mut compressed = dense.clone();
    let idx = compressed.layer_index("fc1").expect("fc2 has fc1");
    let w = compressed.layers()[idx].weight.as_ref().expect("linear has a weight").dense()?;
    let mut k = 0;
    let cw = CompressedWeight::from_dense(
        &w,
        plan_partition(w.len(), 2, 16),
        |_, s| {
            k += 1;
            Adtn::build(s, Init::Gaussian { std: 0.5 }, 100 + k)
        },
        AdtnSpec::new(2, 2, 2, Activation::Relu),
    )?;
    compressed.set_weight(idx, WeightSource::Compressed(cw))?;
    out.push(("fc2 with ADTN-encoded fc1".to_string(), net_report(&compressed, &x, &labels, options)?));

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let layers = vec![
        Layer::init("conv", LayerKind::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, padding: 1 }, &mut rng),
        Layer::init("relu", LayerKind::Relu, &mut rng),
        Layer::init("pool", LayerKind::MaxPool2d { size: 2, stride: 2 }, &mut rng),
        Layer::init("flatten", LayerKind::Flatten, &mut rng),
        Layer::init("fc", LayerKind::Linear { in_features: 8, out_features: 3 }, &mut rng),
    ];
    let conv = Network::new(vec![1, 4, 4], layers)?;
    let x = away_from_zero(&[3, 1, 4, 4], &mut rng);
    out.push(("conv-pool-linear".to_string(), net_report(&conv, &x, &[1, 0, 2], options)?));
    Ok(out)
}

/// Runs every check in `scope`.
pub fn run(scope: Scope, options: GradcheckOptions) -> Result<Vec<Case>, NnError> {
    let mut cases = Vec::new();
    match scope {
        Scope::Ops => {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for (name, loss, inputs) in op_cases(&mut rng) {
                let report = gradcheck_with(loss, &inputs, options)?;
                cases.push(Case { scope, name: name.to_string(), report });
            }
        }
        Scope::Adtn => {
            for q in 3..=6 {
                for m in 1..=3 {
                    for activation in [Activation::Relu, Activation::Identity] {
                        let spec = AdtnSpec::new(q, 2, m, activation);
                        let report = adtn_case(spec, (q * 10 + m) as u64, options)?;
                        cases.push(Case { scope, name: format!("q={q} m={m} {activation}"), report });
                    }
                }
            }
        }
        Scope::Net => {
            for (name, report) in net_cases(options)? {
                cases.push(Case { scope, name, report });
            }
        }
    }
    Ok(cases)
}
