//! Prompt tuning, fine-tuning, and subspace-coordinate tuning over a shared
//! training loop, plus the per-task hyperparameter grid.

pub mod driver;
pub mod grid;

pub use driver::{
    decode_and_score, train, EvalPoint, TrainConfig, TrainJob, TrainOutcome, TrainTarget, TunedParams,
};
pub use grid::{grid_search, GridCellReport, GridConfig, GridJob, GridOutcome};

use crate::autodiff::Tensor;
use crate::rng::stream;

/// The shared prompt initialization: one Gaussian draw per (seed, rows, cols)
/// from the `prompt-init` stream. Every method and every grid cell on a task
/// starts from this same matrix, and the random-subspace baseline is anchored
/// at it.
pub fn prompt_init(seed: u64, rows: usize, cols: usize, std: f64) -> Tensor {
    let mut rng = stream(seed, "prompt-init");
    Tensor::gaussian(&mut rng, rows, cols, 0.0, std)
}

/// Default standard deviation for prompt initialization.
pub const PROMPT_INIT_STD: f64 = 0.02;
