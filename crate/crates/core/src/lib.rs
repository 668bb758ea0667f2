//! Soft-prompt tuning, task-subspace learning, and low-dimensional
//! ("intrinsic") tuning on a small character-level encoder–decoder
//! transformer, with a planted-subspace task generator that makes the whole
//! pipeline verifiable end to end.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod analysis;
pub mod ist;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod subspace;
pub mod tasks;

pub use autodiff::{Gradients, Tape, Tensor, TensorId};
pub use error::{Error, Result};
