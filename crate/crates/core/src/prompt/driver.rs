//! One training loop for three tuning methods. The methods differ only in
//! which leaves receive gradients:
//!
//! * prompt tuning — the backbone is frozen, an `n×d` prompt matrix is free;
//! * subspace tuning — the backbone and the back-projection map are frozen,
//!   a `d_I×1` coordinate vector is free and is mapped to a prompt on-tape;
//! * fine-tuning — every backbone tensor is free and no prompt is used.
//!
//! Everything method-independent is shared: the batch stream (a labeled RNG
//! stream, so two methods given the same seed see the same example sequence),
//! the optimizer, the dev-score checkpoint selection, and the evaluation
//! cadence. Tuning coordinates through an identity map is therefore the same
//! arithmetic, elementwise and in the same order, as tuning the prompt
//! directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::metrics::score;
use crate::model::{greedy_decode, BoundModel, ModelParams, Vocab};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::stream;
use crate::subspace::Subspace;
use crate::tasks::{Example, FewShotSplit, Task};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of optimizer updates. Zero is legal: the run evaluates the
    /// initialization and returns it untouched.
    pub max_steps: usize,
    /// Dev-set evaluation cadence; must divide `max_steps`, so the curve has
    /// exactly `max_steps / eval_every` points at steps
    /// `eval_every, 2·eval_every, …, max_steps`.
    pub eval_every: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Decode cap for dev/test evaluation.
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 2000,
            eval_every: 50,
            batch_size: 4,
            optimizer: AdamWConfig::default(),
            max_new_tokens: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: &str| Error::Config { path: path.into(), detail: detail.into() };
        if self.eval_every == 0 {
            return Err(field("train.eval_every", "must be at least 1"));
        }
        if self.max_steps % self.eval_every != 0 {
            return Err(field("train.eval_every", "must divide max_steps"));
        }
        if self.batch_size == 0 {
            return Err(field("train.batch_size", "must be at least 1"));
        }
        if self.max_new_tokens == 0 {
            return Err(field("train.max_new_tokens", "must be at least 1"));
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr > 0.0) {
            return Err(field("train.lr", "must be a positive finite number"));
        }
        Ok(())
    }
}

/// What the loop is allowed to move.
#[derive(Clone)]
pub enum TrainTarget<'a> {
    /// Direct soft-prompt tuning from the given `n×d` initialization.
    Prompt { init: Tensor },
    /// Coordinate tuning inside a frozen subspace, from the given `d_I×1`
    /// initialization.
    Subspace { space: &'a Subspace, init: Tensor },
    /// Full fine-tuning of the backbone, no prompt.
    Model,
}

pub struct TrainJob<'a> {
    pub model: &'a ModelParams,
    pub vocab: &'a Vocab,
    pub task: &'a Task,
    pub split: &'a FewShotSplit,
    pub target: TrainTarget<'a>,
    pub config: &'a TrainConfig,
    /// Root seed; the batch stream is derived as `batches/<task name>`.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub dev_score: f64,
    /// Training-batch loss at this step, for curve plots.
    pub train_loss: f64,
}

/// The selected parameters, in the same shape as the target that produced
/// them.
#[derive(Debug, Clone)]
pub enum TunedParams {
    Prompt(Tensor),
    Coordinates(Tensor),
    Model(Box<ModelParams>),
}

impl TunedParams {
    pub fn prompt(&self) -> Option<&Tensor> {
        match self {
            TunedParams::Prompt(p) => Some(p),
            _ => None,
        }
    }

    pub fn coordinates(&self) -> Option<&Tensor> {
        match self {
            TunedParams::Coordinates(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub tuned: TunedParams,
    /// One entry per `eval_every` multiple, `max_steps / eval_every` in all.
    pub curve: Vec<EvalPoint>,
    /// Dev score of the untrained initialization (selection candidate at
    /// step 0).
    pub init_dev_score: f64,
    /// Step whose snapshot was selected; 0 means the initialization won.
    pub best_step: usize,
    pub best_dev_score: f64,
    /// Test score of the selected snapshot.
    pub test_score: f64,
    /// Loss of the last training batch; `None` when `max_steps` is 0.
    pub final_train_loss: Option<f64>,
}

/// Mutable method state across steps.
enum State {
    Prompt(Tensor),
    Coordinates(Tensor),
    Model(Box<ModelParams>),
}

impl State {
    fn snapshot(&self) -> TunedParams {
        match self {
            State::Prompt(p) => TunedParams::Prompt(p.clone()),
            State::Coordinates(t) => TunedParams::Coordinates(t.clone()),
            State::Model(m) => TunedParams::Model(m.clone()),
        }
    }
}

/// Decode each example's input and average the task metric against its
/// target.
pub fn decode_and_score(
    model: &ModelParams,
    vocab: &Vocab,
    prompt: Option<&Tensor>,
    examples: &[Example],
    metric: crate::tasks::Metric,
    max_new_tokens: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Usage("cannot score an empty example set".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let decoded = greedy_decode(model, vocab, prompt, &ex.input, max_new_tokens)?;
        total += score(metric, &ex.target, &decoded.text);
    }
    Ok(total / examples.len() as f64)
}

fn resolve_eval_view<'s>(
    state: &'s State,
    job: &TrainJob<'s>,
) -> Result<(&'s ModelParams, Option<Tensor>)> {
    match state {
        State::Prompt(p) => Ok((job.model, Some(p.clone()))),
        State::Coordinates(theta) => {
            let space = match &job.target {
                TrainTarget::Subspace { space, .. } => space,
                _ => unreachable!("coordinate state implies a subspace target"),
            };
            Ok((job.model, Some(space.back_project(theta)?)))
        }
        State::Model(m) => Ok((m, None)),
    }
}

fn dev_score_of(state: &State, job: &TrainJob) -> Result<f64> {
    let (model, prompt) = resolve_eval_view(state, job)?;
    decode_and_score(
        model,
        job.vocab,
        prompt.as_ref(),
        &job.split.dev,
        job.task.header.metric,
        job.config.max_new_tokens,
    )
}

/// Run one tuning method over one task's few-shot split.
pub fn train(job: &TrainJob) -> Result<TrainOutcome> {
    job.config.validate()?;
    if job.split.dev.is_empty() {
        return Err(Error::Usage(format!(
            "task {:?}: checkpoint selection needs a non-empty dev split",
            job.task.header.name
        )));
    }
    if job.split.train.is_empty() {
        return Err(Error::Usage(format!("task {:?}: training needs a non-empty train split", job.task.header.name)));
    }

    // Validate the target's shapes up front so failures name the call site.
    match &job.target {
        TrainTarget::Prompt { init } => {
            if init.cols() != job.model.config.d_model || init.rows() == 0 {
                return Err(Error::dim(
                    "train",
                    format!(
                        "prompt init {:?} vs expected n x {}",
                        init.shape(),
                        job.model.config.d_model
                    ),
                ));
            }
        }
        TrainTarget::Subspace { space, init } => {
            if space.prompt_cols() != job.model.config.d_model {
                return Err(Error::dim(
                    "train",
                    format!(
                        "subspace emits {}-wide prompts but the model wants {}",
                        space.prompt_cols(),
                        job.model.config.d_model
                    ),
                ));
            }
            if init.shape() != (space.dim(), 1) {
                return Err(Error::dim(
                    "train",
                    format!("coordinate init {:?} vs expected {}x1", init.shape(), space.dim()),
                ));
            }
        }
        TrainTarget::Model => {}
    }

    let train_tok: Vec<(Vec<usize>, Vec<usize>)> = job
        .split
        .train
        .iter()
        .map(|ex| Ok((job.vocab.encode(&ex.input)?, job.vocab.encode(&ex.target)?)))
        .collect::<Result<_>>()?;

    let mut state = match &job.target {
        TrainTarget::Prompt { init } => State::Prompt(init.clone()),
        TrainTarget::Subspace { init, .. } => State::Coordinates(init.clone()),
        TrainTarget::Model => State::Model(Box::new(job.model.clone())),
    };

    let init_dev_score = dev_score_of(&state, job)?;
    let mut best_step = 0usize;
    let mut best_dev_score = init_dev_score;
    let mut best_snapshot = state.snapshot();

    let mut batch_rng = stream(job.seed, &format!("batches/{}", job.task.header.name));
    let mut optimizer = AdamW::new(job.config.optimizer);
    let mut curve = Vec::with_capacity(job.config.max_steps / job.config.eval_every);
    let mut last_loss = None;

    for step in 1..=job.config.max_steps {
        let batch: Vec<(Vec<usize>, Vec<usize>)> = (0..job.config.batch_size)
            .map(|_| train_tok[batch_rng.gen_range(0..train_tok.len())].clone())
            .collect();

        let mut tape = Tape::new();
        let loss = match &mut state {
            State::Prompt(p) => {
                let (bound, _) = BoundModel::bind(&mut tape, job.model, false)?;
                let prompt_id = tape.leaf(p.clone(), true);
                let loss = bound.batch_loss(&mut tape, Some(prompt_id), &batch)?;
                let grads = tape.backward(loss)?;
                let grad = grads
                    .get(prompt_id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()));
                optimizer.step(&mut [p], &[grad])?;
                loss
            }
            State::Coordinates(theta) => {
                let space = match &job.target {
                    TrainTarget::Subspace { space, .. } => space,
                    _ => unreachable!(),
                };
                let (bound, _) = BoundModel::bind(&mut tape, job.model, false)?;
                let theta_id = tape.leaf(theta.clone(), true);
                let prompt_id = space.back_project_on_tape(&mut tape, theta_id)?;
                let loss = bound.batch_loss(&mut tape, Some(prompt_id), &batch)?;
                let grads = tape.backward(loss)?;
                let grad = grads
                    .get(theta_id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(theta.rows(), theta.cols()));
                optimizer.step(&mut [theta], &[grad])?;
                loss
            }
            State::Model(m) => {
                let (bound, ids) = BoundModel::bind(&mut tape, m, true)?;
                let loss = bound.batch_loss(&mut tape, None, &batch)?;
                let mut grads = tape.backward(loss)?;
                let grad_list: Vec<Tensor> = ids
                    .iter()
                    .map(|id| {
                        let (r, c) = tape.shape(*id);
                        grads.take(*id).unwrap_or_else(|| Tensor::zeros(r, c))
                    })
                    .collect();
                let mut tensors = m.tensors_mut();
                optimizer.step(&mut tensors, &grad_list)?;
                loss
            }
        };

        let loss_val = tape.value(loss).item()?;
        if !loss_val.is_finite() {
            return Err(Error::numeric(
                format!("training step {step} on task {:?}", job.task.header.name),
                format!("batch loss became {loss_val}"),
            ));
        }
        last_loss = Some(loss_val);

        if step % job.config.eval_every == 0 {
            let dev = dev_score_of(&state, job)?;
            curve.push(EvalPoint { step, dev_score: dev, train_loss: loss_val });
            if dev > best_dev_score {
                best_dev_score = dev;
                best_step = step;
                best_snapshot = state.snapshot();
            }
        }
    }

    // Score the selected snapshot on the held-back test block.
    let best_state = match &best_snapshot {
        TunedParams::Prompt(p) => State::Prompt(p.clone()),
        TunedParams::Coordinates(t) => State::Coordinates(t.clone()),
        TunedParams::Model(m) => State::Model(m.clone()),
    };
    let (model, prompt) = resolve_eval_view(&best_state, job)?;
    let test_score = decode_and_score(
        model,
        job.vocab,
        prompt.as_ref(),
        &job.split.test,
        job.task.header.metric,
        job.config.max_new_tokens,
    )?;

    Ok(TrainOutcome {
        tuned: best_snapshot,
        curve,
        init_dev_score,
        best_step,
        best_dev_score,
        test_score,
        final_train_loss: last_loss,
    })
}
