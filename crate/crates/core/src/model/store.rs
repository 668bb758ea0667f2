//! Model persistence on top of the checkpoint container.

use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams};
use crate::model::vocab::Vocab;

pub const MODEL_KIND: &str = "model";

/// Package parameters plus vocabulary into a checkpoint.
pub fn model_checkpoint(params: &ModelParams, vocab: &Vocab, config_hash: &str) -> Result<Checkpoint> {
    if vocab.size() != params.config.vocab_size {
        return Err(Error::Vocab(format!(
            "vocabulary has {} ids but the model expects {}",
            vocab.size(),
            params.config.vocab_size
        )));
    }
    let mut ck = Checkpoint::new(MODEL_KIND, config_hash);
    ck.set_meta("config", serde_json::to_value(&params.config)?);
    ck.set_meta("vocab", Value::String(vocab.chars_string()));
    for (name, t) in params.named_tensors() {
        ck.insert(name, t.clone());
    }
    Ok(ck)
}

/// Rebuild parameters and vocabulary from a checkpoint.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(ModelParams, Vocab)> {
    ck.expect_kind(MODEL_KIND)?;
    let config_value = ck
        .meta
        .get("config")
        .ok_or_else(|| Error::Parse { line: 0, detail: "model checkpoint missing config".into() })?;
    let config: ModelConfig = serde_json::from_value(config_value.clone())?;
    let vocab = Vocab::from_text(ck.meta_str("vocab")?);
    if vocab.size() != config.vocab_size {
        return Err(Error::Vocab(format!(
            "checkpoint vocabulary has {} ids but its config says {}",
            vocab.size(),
            config.vocab_size
        )));
    }
    let mut params = ModelParams::zeros(&config)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let stored = ck
            .get(name)
            .ok_or_else(|| Error::Parse { line: 0, detail: format!("model checkpoint missing tensor {name:?}") })?;
        if stored.shape() != slot.shape() {
            return Err(Error::dim(
                "model_from_checkpoint",
                format!("tensor {name:?} is {:?} but config implies {:?}", stored.shape(), slot.shape()),
            ));
        }
        *slot = stored.clone();
    }
    Ok((params, vocab))
}
