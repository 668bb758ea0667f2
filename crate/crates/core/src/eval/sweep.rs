//! Ablation sweeps: one challenge report per grid point.
//!
//! A sweep varies exactly one axis — the subspace dimension, the fraction of
//! the task bank available to subspace finding, or the shot count — and
//! re-runs the pipeline point by point. The closure receives the grid value;
//! callers must hold every seed fixed across points so the comparison is
//! paired (the orchestration layer passes the same root seed into each
//! point).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::challenge::PartitionReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Vary the subspace dimension `d_I`.
    LatentDim,
    /// Vary the fraction of training tasks the subspace is fit on.
    TaskFraction,
    /// Vary the few-shot budget (multiples of each task's `K`).
    Shots,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::LatentDim => "d_i",
            SweepKind::TaskFraction => "task_fraction",
            SweepKind::Shots => "shots",
        }
    }

    pub fn parse(s: &str) -> Result<SweepKind> {
        Ok(match s {
            "d_i" | "d_I" => SweepKind::LatentDim,
            "task_fraction" => SweepKind::TaskFraction,
            "shots" => SweepKind::Shots,
            other => {
                return Err(Error::Usage(format!(
                    "unknown sweep kind {other:?}; expected d_i, task_fraction, or shots"
                )))
            }
        })
    }
}

impl std::fmt::Display for SweepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One grid point's value paired with its report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: PartitionReport,
}

/// Map a runner over a non-empty grid, failing fast on the first error.
/// Grid values are plain numbers; each kind's runner interprets them
/// (`d_i` and `shots` round to counts, `task_fraction` stays fractional).
pub fn sweep<F>(grid: &[f64], mut run: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(f64) -> Result<PartitionReport>,
{
    if grid.is_empty() {
        return Err(Error::Usage("sweep grid must be non-empty".into()));
    }
    grid.iter().map(|&value| Ok(SweepPoint { value, report: run(value)? })).collect()
}
