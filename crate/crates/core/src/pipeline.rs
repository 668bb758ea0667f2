//! End-to-end experiment orchestration: one configuration that composes
//! every stage, a canonical hash over it, and stage functions that carry a
//! run from a cold start (pretrain a backbone, plant a task family) through
//! prompt tuning, subspace finding, coordinate tuning, challenges, sweeps,
//! and stability measurements.
//!
//! Stage functions are pure with respect to the filesystem; the CLI layers
//! artifact files and caching on top. Every stage derives its randomness
//! from the root seed through stable labels, so reruns and partial reruns
//! agree bit for bit regardless of worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::{
    collect_stability, run_challenge, stability_std, sweep, ChallengeConfig, ChallengeKind,
    PartitionReport, StabilityReport, SweepKind, SweepPoint, TaskBundle,
};
use crate::ist::{ipt_train, ist_train, ThetaInit};
use crate::model::{pretrain_copy, ModelConfig, ModelParams, PretrainConfig, Vocab, NUM_SPECIALS};
use crate::prompt::{
    grid_search, prompt_init, train, GridConfig, TrainConfig, TrainJob, TrainTarget,
    PROMPT_INIT_STD,
};
use crate::rng::{derive_seed, stream};
use crate::subspace::{msf_train, MsfConfig, MsfOutcome, MsfTaskEntry, Subspace};
use crate::tasks::{
    few_shot_split_with_k, resolve_k, FewShotSplit, SynthFamily, SynthFamilyConfig, Task,
};

/// Sizes used to carve every task's example pool into train/dev/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Dev-set size; 0 means "reuse the task's few-shot budget K".
    pub dev_size: usize,
    /// Test-block size; 0 means "reuse the family's configured test size".
    pub test_size: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { dev_size: 0, test_size: 0 }
    }
}

/// One tuning stage: loop settings plus the hyperparameter grid searched
/// over them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub train: TrainConfig,
    pub grid: GridConfig,
}

impl StageConfig {
    fn validate(&self, stage: &str) -> Result<()> {
        self.train.validate().map_err(|e| prefix_config(e, stage))?;
        self.grid.validate().map_err(|e| prefix_config(e, stage))
    }
}

/// Grids for the three sweep axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrids {
    /// Subspace dimensionalities to fit and score.
    pub latent_dims: Vec<usize>,
    /// Fractions of the training bank used to fit the subspace.
    pub task_fractions: Vec<f64>,
    /// Multipliers applied to each task's few-shot budget K.
    pub shot_multipliers: Vec<f64>,
}

impl Default for SweepGrids {
    fn default() -> Self {
        SweepGrids {
            latent_dims: vec![1, 3, 5, 10],
            task_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            shot_multipliers: vec![1.0, 2.0],
        }
    }
}

impl SweepGrids {
    fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: &str| Error::Config {
            path: path.into(),
            detail: detail.into(),
        };
        if self.latent_dims.iter().any(|d| *d == 0) {
            return Err(field("sweep.latent_dims", "dimensions must be at least 1"));
        }
        if self.task_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(field("sweep.task_fractions", "fractions must lie in (0, 1]"));
        }
        if self.shot_multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(field("sweep.shot_multipliers", "multipliers must be positive"));
        }
        Ok(())
    }

    /// The grid for one sweep axis, as the generic f64 values the sweep
    /// driver iterates over.
    pub fn grid_for(&self, kind: SweepKind) -> Vec<f64> {
        match kind {
            SweepKind::LatentDim => self.latent_dims.iter().map(|d| *d as f64).collect(),
            SweepKind::TaskFraction => self.task_fractions.clone(),
            SweepKind::Shots => self.shot_multipliers.clone(),
        }
    }
}

/// Seed-variance measurement settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Independent runs per task; each varies the initialization and batch
    /// order while the splits stay fixed.
    pub runs: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { runs: 5 }
    }
}

/// The whole experiment in one value. Everything downstream is a pure
/// function of this struct, so its hash identifies a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it by label.
    pub seed: u64,
    /// Characters the backbone reads and writes (specials are added on
    /// top). `model.vocab_size` is derived from this, not read.
    pub alphabet: String,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub family: SynthFamilyConfig,
    pub split: SplitConfig,
    /// Soft prompt tuning.
    pub pt: StageConfig,
    /// Full fine-tuning baselines.
    pub ft: StageConfig,
    pub msf: MsfConfig,
    /// Coordinate tuning inside the found subspace.
    pub ist: StageConfig,
    pub sweep: SweepGrids,
    pub stability: StabilityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            alphabet: "abcdefghijklmnopqrstuvwxyz".into(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            family: SynthFamilyConfig::default(),
            split: SplitConfig::default(),
            pt: StageConfig::default(),
            ft: StageConfig::default(),
            msf: MsfConfig::default(),
            ist: StageConfig::default(),
            sweep: SweepGrids::default(),
            stability: StabilityConfig::default(),
        }
    }
}

fn prefix_config(err: Error, stage: &str) -> Error {
    match err {
        Error::Config { path, detail } => Error::Config {
            path: format!("{stage}.{path}"),
            detail,
        },
        other => other,
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: &str| Error::Config {
            path: path.into(),
            detail: detail.into(),
        };
        if self.alphabet.is_empty() {
            return Err(field("alphabet", "must contain at least one character"));
        }
        self.model_for_vocab(&self.vocab()).validate()?;
        self.family.validate()?;
        self.pt.validate("pt")?;
        self.ft.validate("ft")?;
        self.msf.validate()?;
        self.ist.validate("ist")?;
        self.sweep.validate()?;
        if self.stability.runs < 2 {
            return Err(field("stability.runs", "needs at least two runs"));
        }
        Ok(())
    }

    /// The backbone's character set: the configured alphabet plus specials.
    pub fn vocab(&self) -> Vocab {
        Vocab::from_text(&self.alphabet)
    }

    fn model_for_vocab(&self, vocab: &Vocab) -> ModelConfig {
        let mut mc = self.model.clone();
        mc.vocab_size = vocab.size();
        mc
    }

    /// Dev size resolved against a task's few-shot budget.
    pub fn dev_size_for(&self, task: &Task) -> usize {
        if self.split.dev_size == 0 {
            resolve_k(&task.header)
        } else {
            self.split.dev_size
        }
    }

    /// Test size resolved against the family configuration.
    pub fn test_size(&self) -> usize {
        if self.split.test_size == 0 {
            self.family.test_size
        } else {
            self.split.test_size
        }
    }

    /// Challenge settings assembled from the stage configs. The coordinate
    /// and prompt loops share one grid so their comparison is like for
    /// like; fine-tuning baselines are supplied precomputed, not retrained.
    pub fn challenge_config(&self) -> ChallengeConfig {
        ChallengeConfig {
            ist: self.ist.train.clone(),
            pt: self.pt.train.clone(),
            grid: self.ist.grid.clone(),
            ft: None,
            max_new_tokens: self.pt.train.max_new_tokens,
            seed: self.seed,
        }
    }
}

/// Hex SHA-256 of the config's canonical JSON form. Field order is fixed by
/// the struct definitions and floats print in shortest round-trip form, so
/// equal configs hash equally across runs and machines.
pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    Ok(out)
}

/// A pretrained frozen backbone and its vocabulary.
#[derive(Debug)]
pub struct Backbone {
    pub params: ModelParams,
    pub vocab: Vocab,
}

/// Initialize and warm up the backbone on the copy corpus. Deterministic in
/// the config.
pub fn build_backbone(cfg: &PipelineConfig) -> Result<Backbone> {
    let vocab = cfg.vocab();
    if vocab.size() <= NUM_SPECIALS {
        return Err(Error::Usage("the alphabet produced an empty vocabulary".into()));
    }
    let mc = cfg.model_for_vocab(&vocab);
    let mut rng = stream(cfg.seed, "model-init");
    let mut params = ModelParams::init(&mc, &mut rng)?;
    pretrain_copy(&mut params, &vocab, &cfg.pretrain, derive_seed(cfg.seed, "pretrain"))?;
    Ok(Backbone { params, vocab })
}

/// Plant the synthetic task family on the backbone.
pub fn build_family(cfg: &PipelineConfig, backbone: &Backbone) -> Result<SynthFamily> {
    crate::tasks::generate_family(
        &backbone.params,
        &backbone.vocab,
        &cfg.family,
        derive_seed(cfg.seed, "family"),
    )
}

/// Carve one task's pool. The seed is derived per task name, so adding or
/// removing sibling tasks never moves an existing task's split.
pub fn split_task(cfg: &PipelineConfig, task: &Task) -> Result<FewShotSplit> {
    split_task_with_k(cfg, task, resolve_k(&task.header))
}

/// Like [`split_task`] with an explicit train budget, for shot sweeps.
pub fn split_task_with_k(cfg: &PipelineConfig, task: &Task, k: usize) -> Result<FewShotSplit> {
    few_shot_split_with_k(
        task,
        k,
        self_or(cfg.split.dev_size, resolve_k(&task.header)),
        cfg.test_size(),
        derive_seed(cfg.seed, &format!("split/{}", task.header.name)),
    )
}

fn self_or(value: usize, fallback: usize) -> usize {
    if value == 0 {
        fallback
    } else {
        value
    }
}

/// Splits for a slice of tasks, in order.
pub fn split_all(cfg: &PipelineConfig, tasks: &[Task]) -> Result<Vec<FewShotSplit>> {
    tasks.iter().map(|t| split_task(cfg, t)).collect()
}

/// One task's tuned result: the winning parameters and how they were found.
#[derive(Debug, Clone)]
pub struct TunedTask {
    pub name: String,
    pub prompt: Tensor,
    pub dev_score: f64,
    pub test_score: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub best_step: usize,
}

/// Grid-searched prompt tuning over a set of tasks, in parallel. Every task
/// starts from the same initialization (drawn once from the stage label),
/// so the resulting prompt bank differs only where the tasks do. Per-task
/// batch streams are derived from the task name and never depend on worker
/// scheduling.
pub fn tune_prompt_bank(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
    label: &str,
) -> Result<Vec<TunedTask>> {
    if tasks.len() != splits.len() {
        return Err(Error::Usage(format!(
            "{} tasks but {} splits",
            tasks.len(),
            splits.len()
        )));
    }
    let rows = cfg.family.prompt_rows;
    let cols = backbone.params.config.d_model;
    let init = prompt_init(derive_seed(cfg.seed, &format!("{label}/init")), rows, cols, PROMPT_INIT_STD);
    tasks
        .par_iter()
        .zip(splits.par_iter())
        .map(|(task, split)| {
            let out = grid_search(&crate::prompt::GridJob {
                model: &backbone.params,
                vocab: &backbone.vocab,
                task,
                split,
                target: TrainTarget::Prompt { init: init.clone() },
                base: &cfg.pt.train,
                grid: &cfg.pt.grid,
                seed: derive_seed(cfg.seed, &format!("{label}/{}", task.header.name)),
            })?;
            let prompt = out
                .outcome
                .tuned
                .prompt()
                .expect("a prompt target always yields a prompt")
                .clone();
            Ok(TunedTask {
                name: task.header.name.clone(),
                prompt,
                dev_score: out.outcome.best_dev_score,
                test_score: out.outcome.test_score,
                lr: out.lr,
                batch_size: out.batch_size,
                best_step: out.outcome.best_step,
            })
        })
        .collect()
}

/// Grid-searched coordinate tuning inside `space` over a set of tasks, in
/// parallel, starting from the origin. The returned `prompt` field holds
/// the winning `d_I×1` coordinate vector.
pub fn tune_coordinate_bank(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
    space: &Subspace,
    label: &str,
) -> Result<Vec<TunedTask>> {
    if tasks.len() != splits.len() {
        return Err(Error::Usage(format!(
            "{} tasks but {} splits",
            tasks.len(),
            splits.len()
        )));
    }
    tasks
        .par_iter()
        .zip(splits.par_iter())
        .map(|(task, split)| {
            let out = grid_search(&crate::prompt::GridJob {
                model: &backbone.params,
                vocab: &backbone.vocab,
                task,
                split,
                target: TrainTarget::Subspace {
                    space,
                    init: Tensor::zeros(space.dim(), 1),
                },
                base: &cfg.ist.train,
                grid: &cfg.ist.grid,
                seed: derive_seed(cfg.seed, &format!("{label}/{}", task.header.name)),
            })?;
            let theta = out
                .outcome
                .tuned
                .coordinates()
                .expect("a subspace target always yields coordinates")
                .clone();
            Ok(TunedTask {
                name: task.header.name.clone(),
                prompt: theta,
                dev_score: out.outcome.best_dev_score,
                test_score: out.outcome.test_score,
                lr: out.lr,
                batch_size: out.batch_size,
                best_step: out.outcome.best_step,
            })
        })
        .collect()
}

/// Two-stage warm-started prompt tuning over a set of tasks, in parallel:
/// coordinates first, then free prompt tuning from the back-projection.
/// Both stages use their stage configs as-is (no grid; the point of the
/// warm start is robustness at fixed hyperparameters). The returned
/// `prompt` is the final free prompt; scores are the second stage's.
pub fn warm_start_bank(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
    space: &Subspace,
    label: &str,
) -> Result<Vec<TunedTask>> {
    if tasks.len() != splits.len() {
        return Err(Error::Usage(format!(
            "{} tasks but {} splits",
            tasks.len(),
            splits.len()
        )));
    }
    tasks
        .par_iter()
        .zip(splits.par_iter())
        .map(|(task, split)| {
            let out = ipt_train(
                &backbone.params,
                &backbone.vocab,
                task,
                split,
                space,
                &ThetaInit::Zeros,
                &cfg.ist.train,
                &cfg.pt.train,
                derive_seed(cfg.seed, &format!("{label}/{}", task.header.name)),
            )?;
            let prompt = out
                .pt
                .tuned
                .prompt()
                .expect("a prompt target always yields a prompt")
                .clone();
            Ok(TunedTask {
                name: task.header.name.clone(),
                prompt,
                dev_score: out.pt.best_dev_score,
                test_score: out.pt.test_score,
                lr: cfg.pt.train.optimizer.lr,
                batch_size: cfg.pt.train.batch_size,
                best_step: out.pt.best_step,
            })
        })
        .collect()
}

/// Grid-searched full fine-tuning over a set of tasks, in parallel. Only
/// the scores are kept; the tuned weights are as large as the backbone and
/// serve purely as a reference point.
pub fn fine_tune_scores(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
) -> Result<Vec<f64>> {
    if tasks.len() != splits.len() {
        return Err(Error::Usage(format!(
            "{} tasks but {} splits",
            tasks.len(),
            splits.len()
        )));
    }
    tasks
        .par_iter()
        .zip(splits.par_iter())
        .map(|(task, split)| {
            let out = grid_search(&crate::prompt::GridJob {
                model: &backbone.params,
                vocab: &backbone.vocab,
                task,
                split,
                target: TrainTarget::Model,
                base: &cfg.ft.train,
                grid: &cfg.ft.grid,
                seed: derive_seed(cfg.seed, &format!("ft/{}", task.header.name)),
            })?;
            Ok(out.outcome.test_score)
        })
        .collect()
}

/// Fit the shared subspace to a tuned prompt bank.
pub fn find_subspace(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
    bank: &[TunedTask],
    latent_dim: Option<usize>,
) -> Result<MsfOutcome> {
    if tasks.len() != splits.len() || tasks.len() != bank.len() {
        return Err(Error::Usage(format!(
            "{} tasks, {} splits, {} bank prompts",
            tasks.len(),
            splits.len(),
            bank.len()
        )));
    }
    let mut msf = cfg.msf.clone();
    if let Some(d) = latent_dim {
        msf.latent_dim = d;
    }
    let entries: Vec<MsfTaskEntry> = tasks
        .iter()
        .zip(splits)
        .zip(bank)
        .map(|((task, split), tuned)| MsfTaskEntry {
            task,
            split,
            prompt: tuned.prompt.clone(),
        })
        .collect();
    msf_train(
        &backbone.params,
        &backbone.vocab,
        &entries,
        &msf,
        derive_seed(cfg.seed, "msf"),
    )
}

/// Run one challenge over tasks with their prompt-tuning baselines.
/// `ft_scores`, when present, must align with `tasks`.
pub fn challenge(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    kind: ChallengeKind,
    space: &Subspace,
    partition: &str,
    tasks: &[Task],
    splits: &[FewShotSplit],
    bank: &[TunedTask],
    ft_scores: Option<&[f64]>,
) -> Result<PartitionReport> {
    if tasks.len() != splits.len() || tasks.len() != bank.len() {
        return Err(Error::Usage(format!(
            "{} tasks, {} splits, {} bank prompts",
            tasks.len(),
            splits.len(),
            bank.len()
        )));
    }
    if let Some(ft) = ft_scores {
        if ft.len() != tasks.len() {
            return Err(Error::Usage(format!(
                "{} tasks but {} fine-tuning scores",
                tasks.len(),
                ft.len()
            )));
        }
    }
    let bundles: Vec<TaskBundle> = tasks
        .iter()
        .zip(splits)
        .zip(bank)
        .enumerate()
        .map(|(i, ((task, split), tuned))| TaskBundle {
            task,
            split,
            prompt: Some(&tuned.prompt),
            ft_score: ft_scores.map(|ft| ft[i]),
        })
        .collect();
    run_challenge(
        kind,
        &backbone.params,
        &backbone.vocab,
        &bundles,
        space,
        &cfg.challenge_config(),
        partition,
    )
}

/// Everything a sweep needs besides the axis: the backbone, both task
/// partitions with their splits, and the already-tuned prompt banks.
pub struct SweepInputs<'a> {
    pub backbone: &'a Backbone,
    pub train_tasks: &'a [Task],
    pub train_splits: &'a [FewShotSplit],
    pub train_bank: &'a [TunedTask],
    pub heldout_tasks: &'a [Task],
    pub heldout_splits: &'a [FewShotSplit],
    pub heldout_bank: &'a [TunedTask],
}

/// Sweep one axis. Every point refits the subspace and scores coordinate
/// tuning on the held-out tasks, so points are comparable end to end:
///
/// - `LatentDim` refits at each dimensionality over the full bank.
/// - `TaskFraction` refits over a leading subset of the bank.
/// - `Shots` rebuilds the splits at `round(multiplier · K)` train examples
///   per task, retunes both prompt banks on them, then refits and scores.
pub fn run_sweep(
    cfg: &PipelineConfig,
    kind: SweepKind,
    inputs: &SweepInputs,
) -> Result<Vec<SweepPoint>> {
    let grid = cfg.sweep.grid_for(kind);
    let heldout = ChallengeKind::IstUnseenTask;
    sweep(&grid, |value| match kind {
        SweepKind::LatentDim => {
            let space = find_subspace(
                cfg,
                inputs.backbone,
                inputs.train_tasks,
                inputs.train_splits,
                inputs.train_bank,
                Some(value.round() as usize),
            )?
            .subspace;
            challenge(
                cfg,
                inputs.backbone,
                heldout,
                &space,
                "heldout",
                inputs.heldout_tasks,
                inputs.heldout_splits,
                inputs.heldout_bank,
                None,
            )
        }
        SweepKind::TaskFraction => {
            let n = inputs.train_tasks.len();
            let take = ((value * n as f64).round() as usize).clamp(1, n);
            let space = find_subspace(
                cfg,
                inputs.backbone,
                &inputs.train_tasks[..take],
                &inputs.train_splits[..take],
                &inputs.train_bank[..take],
                None,
            )?
            .subspace;
            challenge(
                cfg,
                inputs.backbone,
                heldout,
                &space,
                "heldout",
                inputs.heldout_tasks,
                inputs.heldout_splits,
                inputs.heldout_bank,
                None,
            )
        }
        SweepKind::Shots => {
            let resplit = |tasks: &[Task]| -> Result<Vec<FewShotSplit>> {
                tasks
                    .iter()
                    .map(|t| {
                        let k = ((value * resolve_k(&t.header) as f64).round() as usize).max(1);
                        split_task_with_k(cfg, t, k)
                    })
                    .collect()
            };
            let train_splits = resplit(inputs.train_tasks)?;
            let heldout_splits = resplit(inputs.heldout_tasks)?;
            let train_bank =
                tune_prompt_bank(cfg, inputs.backbone, inputs.train_tasks, &train_splits, "pt")?;
            let heldout_bank = tune_prompt_bank(
                cfg,
                inputs.backbone,
                inputs.heldout_tasks,
                &heldout_splits,
                "pt-heldout",
            )?;
            let space = find_subspace(
                cfg,
                inputs.backbone,
                inputs.train_tasks,
                &train_splits,
                &train_bank,
                None,
            )?
            .subspace;
            challenge(
                cfg,
                inputs.backbone,
                heldout,
                &space,
                "heldout",
                inputs.heldout_tasks,
                &heldout_splits,
                &heldout_bank,
                None,
            )
        }
    })
}

/// A tuning method whose seed variance can be measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMethod {
    /// Prompt tuning from a fresh random initialization per run.
    ColdPrompt,
    /// Coordinate tuning from the origin; only the batch order varies.
    Coordinates,
    /// Coordinate tuning, then prompt tuning warm-started from its result.
    WarmPrompt,
}

impl StabilityMethod {
    pub fn name(&self) -> &'static str {
        match self {
            StabilityMethod::ColdPrompt => "pt",
            StabilityMethod::Coordinates => "ist",
            StabilityMethod::WarmPrompt => "ipt",
        }
    }

    pub fn parse(s: &str) -> Result<StabilityMethod> {
        Ok(match s {
            "pt" => StabilityMethod::ColdPrompt,
            "ist" => StabilityMethod::Coordinates,
            "ipt" => StabilityMethod::WarmPrompt,
            other => {
                return Err(Error::Usage(format!(
                    "unknown stability method {other:?}; expected pt, ist, or ipt"
                )))
            }
        })
    }
}

/// The per-run seeds for stability measurements.
pub fn stability_seeds(cfg: &PipelineConfig) -> Vec<u64> {
    (0..cfg.stability.runs)
        .map(|i| derive_seed(cfg.seed, &format!("stability/run{i}")))
        .collect()
}

/// Run one method across tasks and seeds and reduce to per-task standard
/// deviations. See [`collect_method_scores`] for the run semantics.
pub fn run_stability(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
    space: Option<&Subspace>,
    method: StabilityMethod,
    seeds: &[u64],
) -> Result<StabilityReport> {
    let scores = collect_method_scores(cfg, backbone, tasks, splits, space, method, seeds)?;
    stability_std(&scores)
}

/// Test scores of one method per task per seed, in input order. Runs vary
/// the initialization (where the method has one) and the batch order; the
/// splits stay fixed so the variance is the method's, not the data's.
/// Hyperparameters are pinned to the stage configs rather than re-searched
/// per run. The coordinate methods need `space`.
pub fn collect_method_scores(
    cfg: &PipelineConfig,
    backbone: &Backbone,
    tasks: &[Task],
    splits: &[FewShotSplit],
    space: Option<&Subspace>,
    method: StabilityMethod,
    seeds: &[u64],
) -> Result<Vec<(String, Vec<f64>)>> {
    if tasks.len() != splits.len() {
        return Err(Error::Usage(format!(
            "{} tasks but {} splits",
            tasks.len(),
            splits.len()
        )));
    }
    if method != StabilityMethod::ColdPrompt && space.is_none() {
        return Err(Error::MissingArtifact(format!(
            "msf (a subspace is needed by stability method {})",
            method.name()
        )));
    }
    let pairs: Vec<(&Task, &FewShotSplit)> = tasks.iter().zip(splits).collect();
    let rows = cfg.family.prompt_rows;
    let cols = backbone.params.config.d_model;
    collect_stability(&pairs, seeds, |task, split, seed| {
        let outcome = match method {
            StabilityMethod::ColdPrompt => train(&TrainJob {
                model: &backbone.params,
                vocab: &backbone.vocab,
                task,
                split,
                target: TrainTarget::Prompt {
                    init: prompt_init(seed, rows, cols, PROMPT_INIT_STD),
                },
                config: &cfg.pt.train,
                seed,
            })?,
            StabilityMethod::Coordinates => ist_train(
                &backbone.params,
                &backbone.vocab,
                task,
                split,
                space.expect("checked above"),
                &ThetaInit::Zeros,
                &cfg.ist.train,
                seed,
            )?,
            StabilityMethod::WarmPrompt => {
                ipt_train(
                    &backbone.params,
                    &backbone.vocab,
                    task,
                    split,
                    space.expect("checked above"),
                    &ThetaInit::Zeros,
                    &cfg.ist.train,
                    &cfg.pt.train,
                    seed,
                )?
                .pt
            }
        };
        Ok(outcome.test_score)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.alphabet = "abcdef".into();
        cfg.model = ModelConfig {
            d_model: 16,
            n_heads: 2,
            ff_mult: 2,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size: 0, // derived from the alphabet
            max_len: 32,
        };
        cfg.pretrain = PretrainConfig {
            steps: 30,
            batch_size: 4,
            lr: 3e-3,
            min_len: 2,
            max_len: 5,
        };
        cfg.family = SynthFamilyConfig {
            train_tasks: 2,
            heldout_tasks: 1,
            subspace_dim: 1,
            prompt_rows: 2,
            examples_per_task: 24,
            test_size: 8,
            input_len_min: 2,
            input_len_max: 4,
            max_new_tokens: 6,
            few_shot_k: Some(4),
            ..SynthFamilyConfig::default()
        };
        cfg.pt.train.max_steps = 4;
        cfg.pt.train.eval_every = 2;
        cfg.pt.train.max_new_tokens = 6;
        cfg.pt.grid = GridConfig::single(1e-3, 2);
        cfg.ft.train = cfg.pt.train.clone();
        cfg.ft.grid = cfg.pt.grid.clone();
        cfg.ist.train = cfg.pt.train.clone();
        cfg.ist.grid = cfg.pt.grid.clone();
        cfg.msf.latent_dim = 1;
        cfg.msf.hidden_dim = 4;
        cfg.msf.max_steps = 3;
        cfg.msf.eval_every = 3;
        cfg
    }

    #[test]
    fn the_hash_tracks_content_not_identity() {
        let a = tiny_config();
        let mut b = tiny_config();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed = 17;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn validation_prefixes_stage_paths() {
        let mut cfg = tiny_config();
        cfg.ist.train.eval_every = 3; // does not divide 4
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "ist.train.eval_every"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn the_bank_shares_one_initialization_and_diverges_by_task() {
        let cfg = tiny_config();
        cfg.validate().unwrap();
        let backbone = build_backbone(&cfg).unwrap();
        let family = build_family(&cfg, &backbone).unwrap();
        let splits = split_all(&cfg, &family.train_tasks).unwrap();
        let bank = tune_prompt_bank(&cfg, &backbone, &family.train_tasks, &splits, "pt").unwrap();
        assert_eq!(bank.len(), 2);
        // Rerunning reproduces the same prompts bit for bit.
        let again = tune_prompt_bank(&cfg, &backbone, &family.train_tasks, &splits, "pt").unwrap();
        for (a, b) in bank.iter().zip(&again) {
            assert_eq!(a.prompt.data(), b.prompt.data());
            assert_eq!(a.test_score, b.test_score);
        }
    }

    #[test]
    fn stability_without_a_subspace_names_the_missing_stage() {
        let cfg = tiny_config();
        let backbone = build_backbone(&cfg).unwrap();
        let family = build_family(&cfg, &backbone).unwrap();
        let splits = split_all(&cfg, &family.train_tasks).unwrap();
        let seeds = stability_seeds(&cfg);
        let err = run_stability(
            &cfg,
            &backbone,
            &family.train_tasks,
            &splits,
            None,
            StabilityMethod::Coordinates,
            &seeds,
        )
        .unwrap_err();
        match err {
            Error::MissingArtifact(msg) => assert!(msg.contains("msf"), "{msg}"),
            other => panic!("expected a missing artifact error, got {other:?}"),
        }
    }
}
