//! Dense tensors and tape-based reverse-mode differentiation.

pub mod conv;
pub mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradReport, ParamReport, Probe};
pub use ops::masked_softmax_rows;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Fault, Gradients, NodeInfo, OpKind, Tape, Var};
pub use tensor::Tensor;
