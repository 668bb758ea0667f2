//! Grid search over (learning rate × batch size) for one task. Every cell
//! runs the same driver with the same seed, so cells differ only in the two
//! swept values. Selection is by best dev score with a deterministic
//! tie-break: smaller learning rate, then smaller batch, then earlier best
//! step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Vocab};
use crate::prompt::driver::{train, TrainConfig, TrainJob, TrainOutcome, TrainTarget};
use crate::tasks::{FewShotSplit, Task};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lrs: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { lrs: vec![1e-3, 3e-4, 1e-4], batch_sizes: vec![4, 8] }
    }
}

impl GridConfig {
    /// A single-cell grid, for runs where the sweep is not wanted.
    pub fn single(lr: f64, batch_size: usize) -> Self {
        GridConfig { lrs: vec![lr], batch_sizes: vec![batch_size] }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: &str| Error::Config { path: path.into(), detail: detail.into() };
        if self.lrs.is_empty() {
            return Err(field("grid.lrs", "must list at least one learning rate"));
        }
        if self.batch_sizes.is_empty() {
            return Err(field("grid.batch_sizes", "must list at least one batch size"));
        }
        if self.lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return Err(field("grid.lrs", "learning rates must be positive finite numbers"));
        }
        if self.batch_sizes.iter().any(|b| *b == 0) {
            return Err(field("grid.batch_sizes", "batch sizes must be at least 1"));
        }
        Ok(())
    }
}

/// Per-cell summary kept for reporting, including cells that failed.
#[derive(Debug, Clone)]
pub struct GridCellReport {
    pub lr: f64,
    pub batch_size: usize,
    pub best_dev_score: Option<f64>,
    pub best_step: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub outcome: TrainOutcome,
    pub lr: f64,
    pub batch_size: usize,
    pub cells: Vec<GridCellReport>,
}

pub struct GridJob<'a> {
    pub model: &'a ModelParams,
    pub vocab: &'a Vocab,
    pub task: &'a Task,
    pub split: &'a FewShotSplit,
    /// Template target; each cell trains from a fresh clone of it, so every
    /// cell starts from the same initialization.
    pub target: TrainTarget<'a>,
    /// Cell runs copy this config and override `optimizer.lr` and
    /// `batch_size` with the cell's values.
    pub base: &'a TrainConfig,
    pub grid: &'a GridConfig,
    pub seed: u64,
}

/// Ordering key: better dev score first, then smaller lr, smaller batch,
/// earlier best step.
fn cell_beats(candidate: (f64, f64, usize, usize), incumbent: (f64, f64, usize, usize)) -> bool {
    let (score_a, lr_a, batch_a, step_a) = candidate;
    let (score_b, lr_b, batch_b, step_b) = incumbent;
    if score_a != score_b {
        return score_a > score_b;
    }
    if lr_a != lr_b {
        return lr_a < lr_b;
    }
    if batch_a != batch_b {
        return batch_a < batch_b;
    }
    step_a < step_b
}

pub fn grid_search(job: &GridJob) -> Result<GridOutcome> {
    job.grid.validate()?;
    let mut cells = Vec::new();
    let mut best: Option<(TrainOutcome, f64, usize)> = None;

    for &lr in &job.grid.lrs {
        for &batch_size in &job.grid.batch_sizes {
            let mut config = job.base.clone();
            config.optimizer.lr = lr;
            config.batch_size = batch_size;
            let cell_job = TrainJob {
                model: job.model,
                vocab: job.vocab,
                task: job.task,
                split: job.split,
                target: job.target.clone(),
                config: &config,
                seed: job.seed,
            };
            match train(&cell_job) {
                Ok(outcome) => {
                    cells.push(GridCellReport {
                        lr,
                        batch_size,
                        best_dev_score: Some(outcome.best_dev_score),
                        best_step: Some(outcome.best_step),
                        error: None,
                    });
                    let key = (outcome.best_dev_score, lr, batch_size, outcome.best_step);
                    let incumbent = best
                        .as_ref()
                        .map(|(o, blr, bbatch)| (o.best_dev_score, *blr, *bbatch, o.best_step));
                    if incumbent.map_or(true, |inc| cell_beats(key, inc)) {
                        best = Some((outcome, lr, batch_size));
                    }
                }
                Err(err) => {
                    log::warn!(
                        "grid cell (lr={lr}, batch={batch_size}) failed on task {:?}: {err}",
                        job.task.header.name
                    );
                    cells.push(GridCellReport {
                        lr,
                        batch_size,
                        best_dev_score: None,
                        best_step: None,
                        error: Some(err.to_string()),
                    });
                }
            }
        }
    }

    match best {
        Some((outcome, lr, batch_size)) => Ok(GridOutcome { outcome, lr, batch_size, cells }),
        None => {
            let details: Vec<String> = cells
                .iter()
                .map(|c| {
                    format!(
                        "(lr={}, batch={}): {}",
                        c.lr,
                        c.batch_size,
                        c.error.as_deref().unwrap_or("unknown failure")
                    )
                })
                .collect();
            Err(Error::GridFailure(format!(
                "every grid cell failed on task {:?}: {}",
                job.task.header.name,
                details.join("; ")
            )))
        }
    }
}
