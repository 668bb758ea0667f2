//! Run-to-run stability: the population standard deviation of a method's
//! test score per task over seeds, and its mean over tasks. Lower is
//! steadier. Seeds vary the initialization and batch order; the data splits
//! stay fixed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{FewShotSplit, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStd {
    pub task: String,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub per_task: Vec<TaskStd>,
    /// Mean of the per-task standard deviations.
    pub mean_std: f64,
    /// Tasks dropped for having fewer than two completed runs.
    pub excluded: usize,
}

fn population_std(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Aggregate per-task score lists (one entry per completed run) into a
/// stability report. Tasks with fewer than two runs cannot yield a spread
/// and are excluded with a warning.
pub fn stability_std(scores_by_task: &[(String, Vec<f64>)]) -> Result<StabilityReport> {
    if scores_by_task.is_empty() {
        return Err(Error::Usage("stability_std needs at least one task".into()));
    }
    let mut per_task = Vec::new();
    let mut excluded = 0usize;
    for (task, scores) in scores_by_task {
        if scores.len() < 2 {
            log::warn!("stability_std: task {task:?} has {} run(s), excluded", scores.len());
            excluded += 1;
            continue;
        }
        per_task.push(TaskStd { task: task.clone(), std: population_std(scores), runs: scores.len() });
    }
    if per_task.is_empty() {
        return Err(Error::Usage(
            "stability_std: no task completed the two runs needed for a spread".into(),
        ));
    }
    let mean_std = per_task.iter().map(|t| t.std).sum::<f64>() / per_task.len() as f64;
    Ok(StabilityReport { per_task, mean_std, excluded })
}

/// Run one method across `tasks × seeds` in parallel and group the scores by
/// task, preserving task order and seed order. The closure gets the task,
/// its fixed split, and the seed for that run.
pub fn collect_stability<F>(
    tasks: &[(&Task, &FewShotSplit)],
    seeds: &[u64],
    run: F,
) -> Result<Vec<(String, Vec<f64>)>>
where
    F: Fn(&Task, &FewShotSplit, u64) -> Result<f64> + Sync,
{
    if seeds.len() < 2 {
        return Err(Error::Usage("stability needs at least two seeds".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..tasks.len())
        .flat_map(|t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, s)| {
            let (task, split) = tasks[t];
            run(task, split, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tasks
        .iter()
        .enumerate()
        .map(|(t, (task, _))| {
            let per_seed = scores[t * seeds.len()..(t + 1) * seeds.len()].to_vec();
            (task.name().to_string(), per_seed)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_matches_hand_values() {
        // Identical scores spread zero; {1, 3} has population std exactly 1.
        let report = stability_std(&[
            ("a".into(), vec![2.0, 2.0, 2.0]),
            ("b".into(), vec![1.0, 3.0]),
        ])
        .unwrap();
        assert_eq!(report.per_task[0].std, 0.0);
        assert_eq!(report.per_task[1].std, 1.0);
        assert_eq!(report.mean_std, 0.5);
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn short_tasks_are_excluded_not_fabricated() {
        let report = stability_std(&[
            ("a".into(), vec![1.0]),
            ("b".into(), vec![1.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(report.excluded, 1);
        assert_eq!(report.per_task.len(), 1);
        assert_eq!(report.per_task[0].task, "b");
        assert!(matches!(stability_std(&[("a".into(), vec![1.0])]), Err(Error::Usage(_))));
        assert!(matches!(stability_std(&[]), Err(Error::Usage(_))));
    }
}
