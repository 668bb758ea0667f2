//! Challenge protocols: how a learned subspace is probed.
//!
//! Reconstruction kinds score `back_project(project(P))` directly against
//! the tuned prompt `P` itself. Tuning kinds run coordinate tuning through
//! the frozen subspace and judge it against a prompt-tuning baseline — on
//! the task's own split (`ist_same`), on freshly re-sampled support sets
//! with the test block fixed (`ist_unseen_data`), or on tasks the subspace
//! never saw (`ist_unseen_task`).
//!
//! Tasks fan out to worker threads; rows are reduced in task order, so
//! reports are deterministic regardless of scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::report::{e_abs, ERel, ScoreRow, ScoreTable};
use crate::model::{ModelParams, Vocab};
use crate::prompt::{
    grid_search, prompt_init, GridConfig, GridJob, TrainConfig, TrainTarget, PROMPT_INIT_STD,
};
use crate::prompt::decode_and_score;
use crate::rng::derive_seed;
use crate::subspace::Subspace;
use crate::tasks::{resample, FewShotSplit, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeKind {
    /// Score the reconstructions of the subspace's own training prompts.
    MsfTrainRecon,
    /// Score the reconstructions of tuned prompts the subspace never saw.
    MsfTestRecon,
    /// Coordinate tuning on the same split the baseline prompt was tuned on.
    IstSame,
    /// Coordinate tuning on re-sampled train/dev, test block unchanged.
    IstUnseenData,
    /// Coordinate tuning on tasks outside the subspace's training bank.
    IstUnseenTask,
}

impl ChallengeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChallengeKind::MsfTrainRecon => "msf_train_recon",
            ChallengeKind::MsfTestRecon => "msf_test_recon",
            ChallengeKind::IstSame => "ist_same",
            ChallengeKind::IstUnseenData => "ist_unseen_data",
            ChallengeKind::IstUnseenTask => "ist_unseen_task",
        }
    }

    pub fn parse(s: &str) -> Result<ChallengeKind> {
        Ok(match s {
            "msf_train_recon" => ChallengeKind::MsfTrainRecon,
            "msf_test_recon" => ChallengeKind::MsfTestRecon,
            "ist_same" => ChallengeKind::IstSame,
            "ist_unseen_data" => ChallengeKind::IstUnseenData,
            "ist_unseen_task" => ChallengeKind::IstUnseenTask,
            other => {
                return Err(Error::Usage(format!(
                    "unknown challenge kind {other:?}; expected one of msf_train_recon, \
                     msf_test_recon, ist_same, ist_unseen_data, ist_unseen_task"
                )))
            }
        })
    }

    fn is_recon(&self) -> bool {
        matches!(self, ChallengeKind::MsfTrainRecon | ChallengeKind::MsfTestRecon)
    }
}

impl std::fmt::Display for ChallengeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One task entering a challenge: its split, and — when earlier stages
/// produced them — its tuned prompt and fine-tuning baseline score.
pub struct TaskBundle<'a> {
    pub task: &'a Task,
    pub split: &'a FewShotSplit,
    /// Tuned soft prompt from the prompt-tuning stage. Required by the
    /// reconstruction kinds; for tuning kinds its test score is the PT
    /// baseline (when absent, a baseline is trained in place).
    pub prompt: Option<&'a Tensor>,
    /// Precomputed fine-tuning baseline test score for this split.
    pub ft_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChallengeConfig {
    /// Coordinate-tuning loop settings (the lr/batch come from `grid`).
    pub ist: TrainConfig,
    /// Prompt-tuning loop settings for baselines trained in place.
    pub pt: TrainConfig,
    /// Hyperparameter grid, shared by coordinate tuning and any in-place
    /// baselines so the comparison is like for like.
    pub grid: GridConfig,
    /// When set, tasks without a precomputed `ft_score` get a fine-tuning
    /// baseline trained in place with these settings.
    pub ft: Option<TrainConfig>,
    /// Decode cap for direct prompt scoring (reconstruction kinds).
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for ChallengeConfig {
    fn default() -> Self {
        ChallengeConfig {
            ist: TrainConfig::default(),
            pt: TrainConfig::default(),
            grid: GridConfig::default(),
            ft: None,
            max_new_tokens: 16,
            seed: 0,
        }
    }
}

impl ChallengeConfig {
    pub fn validate(&self) -> Result<()> {
        self.ist.validate()?;
        self.pt.validate()?;
        self.grid.validate()?;
        if let Some(ft) = &self.ft {
            ft.validate()?;
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config {
                path: "challenge.max_new_tokens".into(),
                detail: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Everything a challenge reports; the aggregates are recomputable from the
/// embedded table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionReport {
    pub challenge: String,
    pub partition: String,
    pub d_i: usize,
    pub task_count: usize,
    pub e_abs: f64,
    pub e_rel_pt: ERel,
    /// Absent when any task lacks a fine-tuning baseline.
    pub e_rel_ft: Option<ERel>,
    pub table: ScoreTable,
}

fn missing_prompt(kind: ChallengeKind, task: &Task) -> Error {
    Error::MissingArtifact(format!(
        "train-pt (tuned prompt for task {:?} is needed by {})",
        task.name(),
        kind.name()
    ))
}

/// Run one challenge over a set of tasks and assemble the report.
///
/// Baseline rule for tuning kinds: a provided `prompt` supplies the PT
/// baseline via its test score (this is the tuned artifact of the
/// prompt-tuning stage); without one, a PT baseline is trained in place on
/// the same split the challenge tunes on.
pub fn run_challenge(
    kind: ChallengeKind,
    model: &ModelParams,
    vocab: &Vocab,
    bundles: &[TaskBundle],
    space: &Subspace,
    cfg: &ChallengeConfig,
    partition: &str,
) -> Result<PartitionReport> {
    cfg.validate()?;
    if bundles.is_empty() {
        return Err(Error::Usage(format!("challenge {} got an empty task set", kind.name())));
    }
    if kind.is_recon() {
        for b in bundles {
            if b.prompt.is_none() {
                return Err(missing_prompt(kind, b.task));
            }
        }
    }

    let rows: Vec<ScoreRow> = bundles
        .par_iter()
        .map(|bundle| run_task(kind, model, vocab, bundle, space, cfg, partition))
        .collect::<Result<Vec<_>>>()?;

    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.score, r.baseline_pt.expect("challenge rows always carry a PT baseline")))
        .collect();
    let e_rel_pt = crate::eval::report::e_rel(&pairs)?;
    let e_rel_ft = if rows.iter().all(|r| r.baseline_ft.is_some()) {
        let ft_pairs: Vec<(f64, f64)> =
            rows.iter().map(|r| (r.score, r.baseline_ft.unwrap())).collect();
        Some(crate::eval::report::e_rel(&ft_pairs)?)
    } else {
        None
    };

    Ok(PartitionReport {
        challenge: kind.name().to_string(),
        partition: partition.to_string(),
        d_i: space.dim(),
        task_count: rows.len(),
        e_abs: e_abs(&scores)?,
        e_rel_pt,
        e_rel_ft,
        table: ScoreTable { rows },
    })
}

fn run_task(
    kind: ChallengeKind,
    model: &ModelParams,
    vocab: &Vocab,
    bundle: &TaskBundle,
    space: &Subspace,
    cfg: &ChallengeConfig,
    partition: &str,
) -> Result<ScoreRow> {
    let task = bundle.task;
    let metric = task.header.metric;
    let task_seed = derive_seed(cfg.seed, &format!("challenge/{}/{}", kind.name(), task.name()));

    // The split the challenge runs on.
    let resampled;
    let split: &FewShotSplit = if kind == ChallengeKind::IstUnseenData {
        resampled = resample(task, bundle.split, derive_seed(cfg.seed, &format!("resample/{}", task.name())))?;
        &resampled
    } else {
        bundle.split
    };

    let (score, baseline_pt) = if kind.is_recon() {
        let prompt = bundle.prompt.ok_or_else(|| missing_prompt(kind, task))?;
        let recon = space.reconstruct(prompt)?;
        let score =
            decode_and_score(model, vocab, Some(&recon), &split.test, metric, cfg.max_new_tokens)?;
        let direct =
            decode_and_score(model, vocab, Some(prompt), &split.test, metric, cfg.max_new_tokens)?;
        (score, direct)
    } else {
        let ist = grid_search(&GridJob {
            model,
            vocab,
            task,
            split,
            target: TrainTarget::Subspace { space, init: Tensor::zeros(space.dim(), 1) },
            base: &cfg.ist,
            grid: &cfg.grid,
            seed: task_seed,
        })?;
        let baseline = match bundle.prompt {
            Some(prompt) => decode_and_score(
                model,
                vocab,
                Some(prompt),
                &split.test,
                metric,
                cfg.max_new_tokens,
            )?,
            None => {
                let init = prompt_init(
                    task_seed,
                    space.prompt_rows(),
                    space.prompt_cols(),
                    PROMPT_INIT_STD,
                );
                grid_search(&GridJob {
                    model,
                    vocab,
                    task,
                    split,
                    target: TrainTarget::Prompt { init },
                    base: &cfg.pt,
                    grid: &cfg.grid,
                    seed: task_seed,
                })?
                .outcome
                .test_score
            }
        };
        (ist.outcome.test_score, baseline)
    };

    let baseline_ft = match (bundle.ft_score, &cfg.ft) {
        (Some(s), _) => Some(s),
        (None, Some(ft_cfg)) => Some(
            grid_search(&GridJob {
                model,
                vocab,
                task,
                split,
                target: TrainTarget::Model,
                base: ft_cfg,
                grid: &cfg.grid,
                seed: task_seed,
            })?
            .outcome
            .test_score,
        ),
        (None, None) => None,
    };

    Ok(ScoreRow {
        task: task.name().to_string(),
        method: kind.name().to_string(),
        partition: partition.to_string(),
        d_i: Some(space.dim()),
        seed: cfg.seed,
        score,
        baseline_pt: Some(baseline_pt),
        baseline_ft,
    })
}
