//! Parameter updates: SGD, Adadelta and Adam with a time-dependent L2
//! penalty folded into the gradient, plus the plateau-driven stage policy
//! that switches between them.

mod l2;
mod optimizer;
mod plateau;

pub use l2::L2Schedule;
pub use optimizer::{AdadeltaHyper, AdamHyper, OptimKind, Optimizer};
pub use plateau::{plateau_decision, Decision, PlateauTracker, Stage, SwitchPolicy};
