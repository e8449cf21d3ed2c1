//! Brick-wall automatically differentiable tensor networks.
//!
//! An ADTN with `q` output lines of dimension `d` encodes a tensor with
//! `d^q` entries. Every line starts from the constant boundary vector `v`;
//! each TN layer applies two columns of order-4 tensors `A[a, b, c, d]`
//! (inputs `a, b`, outputs `c, d`) to neighbouring line pairs:
//!
//! ```text
//! line 0 ─v─┬───┐───────────┬───┐──────── ...
//!           │ A │           │ A │
//! line 1 ─v─┴───┘─┬───┐─σ───┴───┘─┬───┐── ...
//!                 │ B │           │ B │
//! line 2 ─v─┬───┐─┴───┘─σ───┬───┐─┴───┘── ...
//!           │ A │           │ A │
//! line 3 ─v─┴───┘───────σ───┴───┘──────── ...
//! ```
//!
//! Column A covers pairs `(0,1), (2,3), ...`, column B covers
//! `(1,2), (3,4), ...`, giving `q - 1` tensors per layer. The activation is
//! applied elementwise to the running state between layers, never after the
//! last one. The state is contracted gate by gate; the `d^q x d^q` layer
//! matrices are never formed.

mod compressed;
mod partition;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{self, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub use compressed::CompressedWeight;
pub use partition::{plan_partition, plan_partition_capped, ChunkPlan, CompressionPlan, Segment, DEFAULT_MIN_CHUNK};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdtnError {
    #[error("invalid ADTN spec: {0}")]
    InvalidSpec(String),

    #[error("wiring inconsistency: {0}")]
    Wiring(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
}

pub type Result<T, E = AdtnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

/// Hyper-parameters of one brick-wall network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdtnSpec {
    /// Number of output lines (unshared indexes).
    pub q: usize,
    /// Dimension of every line.
    pub d: usize,
    /// Number of TN layers.
    pub m: usize,
    pub activation: Activation,
}

impl AdtnSpec {
    pub fn new(q: usize, d: usize, m: usize, activation: Activation) -> Self {
        AdtnSpec { q, d, m, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(AdtnError::InvalidSpec(format!("q = {} (need q >= 2)", self.q)));
        }
        if self.d < 2 {
            return Err(AdtnError::InvalidSpec(format!("d = {} (need d >= 2)", self.d)));
        }
        if self.m < 1 {
            return Err(AdtnError::InvalidSpec("m = 0 (need at least one TN layer)".into()));
        }
        if self.d.checked_pow(self.q as u32).is_none() {
            return Err(AdtnError::InvalidSpec(format!("d^q = {}^{} overflows", self.d, self.q)));
        }
        Ok(())
    }

    /// `d^q`, the number of entries the network encodes.
    pub fn encoded_size(&self) -> usize {
        self.d.pow(self.q as u32)
    }

    /// Number of order-4 tensors, `m * (q - 1)`.
    pub fn tensor_count(&self) -> usize {
        self.m * (self.q - 1)
    }

    /// Trainable scalars, `m * (q - 1) * d^4`.
    pub fn param_count(&self) -> usize {
        self.tensor_count() * self.d.pow(4)
    }

    /// Gate placement in contraction order.
    pub fn wiring(&self) -> Vec<GateSite> {
        let mut sites = Vec::with_capacity(self.tensor_count());
        for layer in 0..self.m {
            for (column, first) in [(Column::A, 0), (Column::B, 1)] {
                let mut top = first;
                while top + 1 < self.q {
                    sites.push(GateSite { layer, column, top });
                    top += 2;
                }
            }
        }
        sites
    }
}

pub fn encoded_size(spec: &AdtnSpec) -> usize {
    spec.encoded_size()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    A,
    B,
}

/// Position of one tensor: it couples lines `top` and `top + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateSite {
    pub layer: usize,
    pub column: Column,
    pub top: usize,
}

/// Initial values for the tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Reshaped `d^2 x d^2` identity plus Gaussian noise.
    NearIdentity { noise: f64 },
    /// I.i.d. Gaussian entries.
    Gaussian { std: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::NearIdentity { noise: 0.01 }
    }
}

/// The encoded order-`q` tensor produced by [`Adtn::contract`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTensor<T: Scalar> {
    value: Tensor<T>,
}

impl<T: Scalar> EncodedTensor<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.value
    }

    /// Row-major flattening over lines `0..q`, line 0 most significant.
    pub fn flat(&self) -> &[T] {
        self.value.data()
    }

    pub fn into_flat(self) -> Tensor<T> {
        self.value.flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adtn<T: Scalar = f64> {
    spec: AdtnSpec,
    tensors: Vec<Tensor<T>>,
    boundary: Tensor<T>,
    wiring: Vec<GateSite>,
}

/// Boundary vector `[1, 0, ..., 0]` of length `d`.
pub fn default_boundary<T: Scalar>(d: usize) -> Tensor<T> {
    Tensor::from_fn(vec![d], |i| if i[0] == 0 { T::one() } else { T::zero() }).expect("d >= 1")
}

/// Builds a brick-wall ADTN with the default near-identity initialisation.
pub fn build_brick_wall<T: Scalar>(spec: AdtnSpec, seed: u64) -> Result<Adtn<T>> {
    Adtn::build(spec, Init::default(), seed)
}

impl<T: Scalar> Adtn<T> {
    pub fn build(spec: AdtnSpec, init: Init, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.d;
        let (std, identity) = match init {
            Init::NearIdentity { noise } => (noise, true),
            Init::Gaussian { std } => (std, false),
        };
        let normal = Normal::new(0.0, std).map_err(|e| AdtnError::InvalidSpec(format!("init std {std}: {e}")))?;
        let tensors = (0..spec.tensor_count())
            .map(|_| {
                Tensor::from_fn(vec![d, d, d, d], |i| {
                    let base = if identity && i[0] == i[2] && i[1] == i[3] { 1.0 } else { 0.0 };
                    T::from_f64_lossy(base + normal.sample(&mut rng))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Adtn { spec, tensors, boundary: default_boundary(d), wiring: spec.wiring() })
    }

    /// Assembles an ADTN from explicit parts, checking that they agree.
    pub fn from_parts(spec: AdtnSpec, tensors: Vec<Tensor<T>>, boundary: Tensor<T>) -> Result<Self> {
        spec.validate()?;
        let adtn = Adtn { spec, tensors, boundary, wiring: spec.wiring() };
        adtn.check()?;
        Ok(adtn)
    }

    fn check(&self) -> Result<()> {
        let d = self.spec.d;
        if self.tensors.len() != self.wiring.len() {
            return Err(AdtnError::Wiring(format!(
                "{} tensors for {} gate sites",
                self.tensors.len(),
                self.wiring.len()
            )));
        }
        if let Some((k, t)) = self.tensors.iter().enumerate().find(|(_, t)| t.shape() != [d, d, d, d]) {
            return Err(AdtnError::Wiring(format!("tensor {k} has shape {:?}, expected [{d}; 4]", t.shape())));
        }
        if self.boundary.shape() != [d] {
            return Err(AdtnError::Wiring(format!("boundary vector shape {:?}", self.boundary.shape())));
        }
        for site in &self.wiring {
            if site.top + 1 >= self.spec.q || site.layer >= self.spec.m {
                return Err(AdtnError::Wiring(format!("gate site {site:?} outside the network")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &AdtnSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn boundary(&self) -> &Tensor<T> {
        &self.boundary
    }

    pub fn wiring(&self) -> &[GateSite] {
        &self.wiring
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `v ⊗ v ⊗ ... ⊗ v`, the order-`q` input state.
    pub fn product_state(&self) -> Tensor<T> {
        let q = self.spec.q;
        let v = self.boundary.data();
        Tensor::from_fn(vec![self.spec.d; q], |idx| idx.iter().fold(T::one(), |acc, &i| acc * v[i]))
            .expect("valid spec")
    }

    fn activate(&self, layer: usize, state: Tensor<T>) -> Tensor<T> {
        if layer + 1 < self.spec.m && self.spec.activation == Activation::Relu {
            state.relu()
        } else {
            state
        }
    }

    /// Contracts the network into its encoded tensor.
    pub fn contract(&self) -> Result<EncodedTensor<T>> {
        self.check()?;
        let q = self.spec.q;
        let mut state = self.product_state();
        let mut current_layer = 0;
        for (site, gate) in self.wiring.iter().zip(&self.tensors) {
            if site.layer != current_layer {
                state = self.activate(current_layer, state);
                current_layer = site.layer;
            }
            state = state.contract(gate, &[site.top, site.top + 1], &[0, 1])?.permute(&restore_perm(q, site.top))?;
        }
        Ok(EncodedTensor { value: self.activate(current_layer, state) })
    }

    /// Records the contraction on `tape`, with `gates[k]` standing in for
    /// tensor `k`. Returns the encoded tensor flattened to order 1.
    pub fn contract_on<'t>(&self, tape: &'t Tape<T>, gates: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        self.check()?;
        if gates.len() != self.tensors.len() {
            return Err(AdtnError::Wiring(format!("{} gate variables for {} tensors", gates.len(), self.tensors.len())));
        }
        let q = self.spec.q;
        let mut state = tape.constant(self.product_state());
        let mut current_layer = 0;
        let activate = |layer: usize, s: Var<'t, T>| {
            if layer + 1 < self.spec.m && self.spec.activation == Activation::Relu {
                s.relu()
            } else {
                s
            }
        };
        for (site, &gate) in self.wiring.iter().zip(gates) {
            if site.layer != current_layer {
                state = activate(current_layer, state);
                current_layer = site.layer;
            }
            state = state.contract(gate, &[site.top, site.top + 1], &[0, 1])?.permute(&restore_perm(q, site.top))?;
        }
        let out = activate(current_layer, state);
        Ok(out.reshape(vec![self.spec.encoded_size()])?)
    }
}

/// After contracting lines `(top, top+1)` the two new indexes sit at the end;
/// this permutation moves them back into place.
fn restore_perm(q: usize, top: usize) -> Vec<usize> {
    (0..q)
        .map(|i| match i {
            i if i < top => i,
            i if i == top => q - 2,
            i if i == top + 1 => q - 1,
            i => i - 2,
        })
        .collect()
}

pub fn contract_adtn<T: Scalar>(adtn: &Adtn<T>) -> Result<EncodedTensor<T>> {
    adtn.contract()
}

pub fn adtn_param_count<T: Scalar>(adtn: &Adtn<T>) -> usize {
    adtn.param_count()
}
