//! Reverse-mode automatic differentiation over dense `f64` matrices.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{verify_all_ops, GradCheck, OpSweepEntry};
pub use tape::{Gradients, Tape, TensorId};
pub use tensor::Tensor;
