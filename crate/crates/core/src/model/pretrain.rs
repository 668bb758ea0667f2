//! Backbone warm-up on a synthetic copy corpus.
//!
//! Before any task exists, the freshly initialized model is trained to echo
//! random character strings. That gives the encoder–decoder nontrivial,
//! input-dependent behavior — a prerequisite for generating interesting
//! synthetic tasks by decoding under a planted prompt.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::forward::BoundModel;
use crate::model::params::ModelParams;
use crate::model::vocab::{Vocab, NUM_SPECIALS};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 800, batch_size: 8, lr: 3e-3, min_len: 3, max_len: 8 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn random_token_string(rng: &mut impl Rng, vocab: &Vocab, min_len: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(min_len..=max_len);
    let regular = vocab.size() - NUM_SPECIALS;
    (0..len).map(|_| NUM_SPECIALS + rng.gen_range(0..regular)).collect()
}

/// Train the full model on `input → input` pairs. Deterministic in `seed`.
pub fn pretrain_copy(
    params: &mut ModelParams,
    vocab: &Vocab,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    if cfg.steps == 0 {
        return Err(Error::Usage("warm-up needs at least one step".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.max_len + 1 > params.config.max_len {
        return Err(Error::Usage(format!(
            "copy lengths {}..={} do not fit the model's max_len {}",
            cfg.min_len, cfg.max_len, params.config.max_len
        )));
    }
    let mut rng = stream(seed, "pretrain-copy");
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr));
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let batch: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.batch_size)
            .map(|_| {
                let ids = random_token_string(&mut rng, vocab, cfg.min_len, cfg.max_len);
                (ids.clone(), ids)
            })
            .collect();
        let mut tape = Tape::new();
        let (bound, leaf_ids) = BoundModel::bind(&mut tape, params, true)?;
        let loss = bound.batch_loss(&mut tape, None, &batch)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(Error::numeric("pretrain-copy", format!("loss became {loss_value} at step {step}")));
        }
        if step == 0 {
            initial_loss = loss_value;
        }
        final_loss = loss_value;
        let mut grads = tape.backward(loss)?;
        let grad_tensors: Vec<_> = leaf_ids
            .iter()
            .map(|&id| {
                grads.take(id).ok_or_else(|| Error::numeric("pretrain-copy", "missing gradient for a model parameter"))
            })
            .collect::<Result<Vec<_>>>()?;
        drop(tape);
        let mut refs = params.tensors_mut();
        opt.step(&mut refs, &grad_tensors)?;
    }
    Ok(PretrainReport { initial_loss, final_loss })
}
