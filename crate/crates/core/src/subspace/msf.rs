//! Multi-task subspace finding: fit the prompt autoencoder to a bank of
//! per-task tuned prompts so that a single low-dimensional coordinate system
//! explains all of them.
//!
//! The training objective for a minibatch of tasks is
//!
//! ```text
//!   mean_t [ lm_weight · L_LM(task_t, reconstruct(P_t))
//!            + alpha · ‖reconstruct(P_t) − P_t‖²_F ]
//! ```
//!
//! i.e. reconstructed prompts must both stay close to the originals and
//! still drive the frozen backbone to solve their tasks. `lm_weight` is 1 in
//! the standard setup; setting it to 0 turns the loop into a pure
//! autoencoder fit, which is how the planted-subspace recovery oracle runs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{BoundModel, ModelParams, Vocab};
use crate::optim::{AdamW, AdamWConfig};
use crate::prompt::decode_and_score;
use crate::rng::stream;
use crate::subspace::autoencoder::{AutoencoderParams, BoundAutoencoder};
use crate::subspace::space::{BackProjection, Subspace};
use crate::tasks::{FewShotSplit, Task};

/// Which autoencoder snapshot a run returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsfSelection {
    /// The snapshot with the best mean dev score across the bank's tasks
    /// (evaluated every `eval_every` steps, with reconstructed prompts).
    DevScore,
    /// The final step's parameters; no decoding during training.
    Final,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsfConfig {
    /// Subspace dimension `d_I`.
    pub latent_dim: usize,
    /// Decoder hidden width `d_I'`.
    pub hidden_dim: usize,
    /// Weight of the reconstruction term.
    pub alpha: f64,
    /// Weight of the language-modeling term; 0 disables it (and the backbone
    /// is never consulted during training).
    pub lm_weight: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Tasks per step, sampled with replacement from the bank.
    pub task_batch: usize,
    /// Examples per sampled task per step.
    pub example_batch: usize,
    pub optimizer: AdamWConfig,
    /// Decode cap for dev evaluation.
    pub max_new_tokens: usize,
    pub selection: MsfSelection,
}

impl Default for MsfConfig {
    fn default() -> Self {
        MsfConfig {
            latent_dim: 5,
            hidden_dim: 64,
            alpha: 1.0,
            lm_weight: 1.0,
            max_steps: 2000,
            eval_every: 200,
            task_batch: 1,
            example_batch: 4,
            optimizer: AdamWConfig::default(),
            max_new_tokens: 16,
            selection: MsfSelection::DevScore,
        }
    }
}

impl MsfConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: &str| Error::Config { path: path.into(), detail: detail.into() };
        if self.latent_dim == 0 {
            return Err(field("msf.latent_dim", "must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(field("msf.hidden_dim", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(field("msf.alpha", "must be a non-negative finite number"));
        }
        if !(self.lm_weight.is_finite() && self.lm_weight >= 0.0) {
            return Err(field("msf.lm_weight", "must be a non-negative finite number"));
        }
        if self.alpha == 0.0 && self.lm_weight == 0.0 {
            return Err(field("msf.alpha", "alpha and lm_weight cannot both be zero"));
        }
        if self.task_batch == 0 {
            return Err(field("msf.task_batch", "must be at least 1"));
        }
        if self.example_batch == 0 {
            return Err(field("msf.example_batch", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(field("msf.eval_every", "must be at least 1"));
        }
        if self.max_new_tokens == 0 {
            return Err(field("msf.max_new_tokens", "must be at least 1"));
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr > 0.0) {
            return Err(field("msf.lr", "must be a positive finite number"));
        }
        Ok(())
    }
}

/// One bank entry: a task, its few-shot split, and its tuned prompt.
pub struct MsfTaskEntry<'a> {
    pub task: &'a Task,
    pub split: &'a FewShotSplit,
    pub prompt: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsfEvalPoint {
    pub step: usize,
    /// Joint objective of this step's batch, before the update.
    pub objective: f64,
    /// Mean dev score across the bank under reconstructed prompts; absent
    /// when selection is `Final`.
    pub dev_score: Option<f64>,
}

#[derive(Debug)]
pub struct MsfOutcome {
    /// The learned subspace (autoencoder variant), at the selected snapshot.
    pub subspace: Subspace,
    pub curve: Vec<MsfEvalPoint>,
    /// Step of the selected snapshot; 0 means the initialization.
    pub best_step: usize,
    /// Mean dev score of the selected snapshot; absent when selection is
    /// `Final`.
    pub best_dev_score: Option<f64>,
    /// Mean squared reconstruction residual of the selected snapshot over
    /// the bank.
    pub reconstruction_error: f64,
}

/// Mean over the bank of `‖reconstruct(P) − P‖²_F`.
pub fn mean_reconstruction_error(ae: &AutoencoderParams, bank: &[Tensor]) -> Result<f64> {
    if bank.is_empty() {
        return Err(Error::Usage("reconstruction error over an empty bank".into()));
    }
    let mut total = 0.0;
    for p in bank {
        let v = p.reshaped(p.len(), 1)?;
        total += ae.reconstruct_flat(&v).sub(&v).frob_sq();
    }
    Ok(total / bank.len() as f64)
}

/// Mean of the flattened bank, as a column.
pub fn bank_centroid(bank: &[Tensor]) -> Result<Tensor> {
    if bank.is_empty() {
        return Err(Error::Usage("centroid of an empty bank".into()));
    }
    let flat = bank[0].len();
    let mut sum = Tensor::zeros(flat, 1);
    for p in bank {
        sum.add_assign(&p.reshaped(flat, 1)?);
    }
    Ok(sum.scale(1.0 / bank.len() as f64))
}

fn mean_dev_score(
    model: &ModelParams,
    vocab: &Vocab,
    entries: &[MsfTaskEntry],
    ae: &AutoencoderParams,
    max_new_tokens: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for entry in entries {
        let v = entry.prompt.reshaped(entry.prompt.len(), 1)?;
        let recon = ae.reconstruct_flat(&v).reshaped(entry.prompt.rows(), entry.prompt.cols())?;
        total += decode_and_score(
            model,
            vocab,
            Some(&recon),
            &entry.split.dev,
            entry.task.header.metric,
            max_new_tokens,
        )?;
    }
    Ok(total / entries.len() as f64)
}

/// Fit the autoencoder to a bank of tuned prompts over their tasks.
pub fn msf_train(
    model: &ModelParams,
    vocab: &Vocab,
    entries: &[MsfTaskEntry],
    config: &MsfConfig,
    seed: u64,
) -> Result<MsfOutcome> {
    config.validate()?;
    if entries.is_empty() {
        return Err(Error::Usage("subspace finding needs a non-empty prompt bank".into()));
    }
    let (rows, cols) = entries[0].prompt.shape();
    let flat_dim = rows * cols;
    for entry in entries {
        if entry.prompt.shape() != (rows, cols) {
            return Err(Error::dim(
                "msf_train",
                format!(
                    "bank prompts disagree on shape: {:?} vs {:?}",
                    entry.prompt.shape(),
                    (rows, cols)
                ),
            ));
        }
        if config.lm_weight > 0.0 && entry.split.train.is_empty() {
            return Err(Error::Usage(format!(
                "task {:?}: the language-modeling term needs a non-empty train split",
                entry.task.header.name
            )));
        }
        if config.selection == MsfSelection::DevScore && entry.split.dev.is_empty() {
            return Err(Error::Usage(format!(
                "task {:?}: dev-score selection needs a non-empty dev split",
                entry.task.header.name
            )));
        }
    }
    if cols != model.config.d_model {
        return Err(Error::dim(
            "msf_train",
            format!("bank prompts are {cols}-wide but the model wants {}", model.config.d_model),
        ));
    }
    if config.latent_dim > flat_dim {
        return Err(Error::Usage(format!(
            "subspace dimension {} exceeds flattened prompt size {flat_dim}",
            config.latent_dim
        )));
    }

    // Flattened bank, pre-tokenized train splits.
    let bank: Vec<Tensor> = entries.iter().map(|e| e.prompt.clone()).collect();
    let flats: Vec<Tensor> =
        bank.iter().map(|p| p.reshaped(flat_dim, 1)).collect::<Result<_>>()?;
    let train_tok: Vec<Vec<(Vec<usize>, Vec<usize>)>> = entries
        .iter()
        .map(|e| {
            e.split
                .train
                .iter()
                .map(|ex| Ok((vocab.encode(&ex.input)?, vocab.encode(&ex.target)?)))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let centroid = bank_centroid(&bank)?;
    let mut ae = AutoencoderParams::init(
        &mut stream(seed, "msf/init"),
        flat_dim,
        config.latent_dim,
        config.hidden_dim,
        Some(&centroid),
    )?;

    let evaluate = |ae: &AutoencoderParams| -> Result<Option<f64>> {
        match config.selection {
            MsfSelection::DevScore => {
                Ok(Some(mean_dev_score(model, vocab, entries, ae, config.max_new_tokens)?))
            }
            MsfSelection::Final => Ok(None),
        }
    };

    // The initialization is a selection candidate, like any later snapshot.
    let init_dev = evaluate(&ae)?;
    let mut best_step = 0usize;
    let mut best_dev = init_dev;
    let mut best_ae = ae.clone();

    let mut task_rng = stream(seed, "msf/tasks");
    let mut example_rngs: Vec<_> = entries
        .iter()
        .map(|e| stream(seed, &format!("msf/batches/{}", e.task.header.name)))
        .collect();
    let mut optimizer = AdamW::new(config.optimizer);
    let mut curve = Vec::with_capacity(config.max_steps / config.eval_every);

    for step in 1..=config.max_steps {
        let chosen: Vec<usize> =
            (0..config.task_batch).map(|_| task_rng.gen_range(0..entries.len())).collect();

        let mut tape = Tape::new();
        let (bound_ae, ae_ids) = BoundAutoencoder::bind(&mut tape, &ae, true);
        // The backbone is consulted only when the LM term is active.
        let bound_model = if config.lm_weight > 0.0 {
            Some(BoundModel::bind(&mut tape, model, false)?.0)
        } else {
            None
        };

        let mut total: Option<crate::autodiff::TensorId> = None;
        for &t in &chosen {
            let v = tape.constant(flats[t].clone());
            let recon = bound_ae.reconstruct(&mut tape, v)?;
            let mut term: Option<crate::autodiff::TensorId> = None;
            if let Some(bound) = &bound_model {
                let pool = &train_tok[t];
                let batch: Vec<(Vec<usize>, Vec<usize>)> = (0..config.example_batch)
                    .map(|_| pool[example_rngs[t].gen_range(0..pool.len())].clone())
                    .collect();
                let prompt = tape.reshape(recon, rows, cols)?;
                let lm = bound.batch_loss(&mut tape, Some(prompt), &batch)?;
                term = Some(tape.scale(lm, config.lm_weight));
            }
            if config.alpha > 0.0 {
                let residual = tape.squared_error_sum(recon, v)?;
                let scaled = tape.scale(residual, config.alpha);
                term = Some(match term {
                    Some(acc) => tape.add(acc, scaled)?,
                    None => scaled,
                });
            }
            let term = term.expect("validate() rejects alpha = lm_weight = 0");
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let objective = tape.scale(total.expect("task_batch >= 1"), 1.0 / config.task_batch as f64);

        let objective_val = tape.value(objective).item()?;
        if !objective_val.is_finite() {
            return Err(Error::numeric(
                format!("subspace-finding step {step}"),
                format!("objective became {objective_val}"),
            ));
        }

        let mut grads = tape.backward(objective)?;
        let grad_list: Vec<Tensor> = ae_ids
            .iter()
            .map(|id| {
                let (r, c) = tape.shape(*id);
                grads.take(*id).unwrap_or_else(|| Tensor::zeros(r, c))
            })
            .collect();
        let mut tensors = ae.tensors_mut();
        optimizer.step(&mut tensors, &grad_list)?;

        if step % config.eval_every == 0 {
            let dev = evaluate(&ae)?;
            curve.push(MsfEvalPoint { step, objective: objective_val, dev_score: dev });
            if let (Some(d), Some(b)) = (dev, best_dev) {
                if d > b {
                    best_dev = Some(d);
                    best_step = step;
                    best_ae = ae.clone();
                }
            }
        }
    }

    // Under Final selection the last step wins by definition.
    if config.selection == MsfSelection::Final {
        best_ae = ae;
        best_step = config.max_steps;
    }

    let reconstruction_error = mean_reconstruction_error(&best_ae, &bank)?;
    let subspace = Subspace::new(rows, cols, config.latent_dim, BackProjection::Mlp(best_ae))?;
    Ok(MsfOutcome { subspace, curve, best_step, best_dev_score: best_dev, reconstruction_error })
}
