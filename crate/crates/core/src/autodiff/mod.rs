//! Dense `f64` tensors, a reverse-mode tape over them, named parameter
//! storage and a finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Parameter, ParameterStore};
pub use tape::{softmax, Gradients, NodeId, Tape, PROB_CLAMP};
pub use tensor::{circular_correlation, dot, matvec, Tensor, MAX_RANK};
