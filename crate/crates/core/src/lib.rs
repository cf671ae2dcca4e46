//! Densely interactive inference network (DIIN) for natural language
//! inference, built on a small reverse-mode tensor engine, together with
//! the training machinery around it: time-decaying L2 inside the optimizer,
//! plateau-triggered optimizer switching, adaptive evaluation frequency and
//! parameter-count checksums.
//!
//! Everything numeric is generic over [`Scalar`]; [`Model32`] is what
//! training uses and [`Model64`] is what gradient checks use.

pub mod autograd;
pub mod error;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod text;
pub mod train;

pub use autograd::{ParamId, ParamStore, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::Diin<f32>;
pub type Model64 = model::Diin<f64>;
