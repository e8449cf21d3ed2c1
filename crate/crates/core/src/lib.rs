//! Compression of neural-network weights into deep brick-wall tensor
//! networks whose tensors are trained by automatic differentiation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`] provide dense tensors and a reverse-mode tape.
//! * [`nn`] holds the layers, losses, optimizers and the FC-2 / LeNet-5 models.
//! * [`adtn`] builds and contracts brick-wall networks and partitions
//!   parameter vectors into power-of-`d` chunks.
//! * [`compress`] runs the two-stage (fit, then fine-tune) pipeline.
//! * [`data`] and [`checkpoint`] cover the file formats.
//! * [`gradsuite`] bundles the finite-difference checks run by the CLI.

pub mod adtn;
pub mod autodiff;
pub mod checkpoint;
pub mod compress;
pub mod data;
pub mod gradsuite;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod tensor;

pub use autodiff::{AutodiffError, Tape, Var};
pub use scalar::{DType, Scalar};
pub use tensor::{Tensor, TensorError};
