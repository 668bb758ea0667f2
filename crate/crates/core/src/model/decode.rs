//! Greedy decoding.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::forward::BoundModel;
use crate::model::params::ModelParams;
use crate::model::vocab::{Vocab, BOS_ID, EOS_ID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub token_ids: Vec<usize>,
    /// True when generation hit the length cap before emitting the end marker.
    pub truncated: bool,
}

/// Greedily decode the model's output for `input`, optionally conditioned on
/// a soft prompt. At each step the highest-scoring token wins, ties resolve
/// to the lowest id, and the begin marker is never emitted. Generation stops
/// at the end marker or after `max_new_tokens`, whichever comes first.
pub fn greedy_decode(
    params: &ModelParams,
    vocab: &Vocab,
    prompt: Option<&Tensor>,
    input: &str,
    max_new_tokens: usize,
) -> Result<Decoded> {
    if vocab.size() != params.config.vocab_size {
        return Err(Error::Vocab(format!(
            "vocabulary has {} ids but the model expects {}",
            vocab.size(),
            params.config.vocab_size
        )));
    }
    let input_ids = vocab.encode(input)?;
    let mut tape = Tape::new();
    let (bound, _) = BoundModel::bind(&mut tape, params, false)?;
    let prompt_id = prompt.map(|p| tape.constant(p.clone()));
    let enc = bound.encode(&mut tape, prompt_id, &input_ids)?;

    // The decoder input is BOS plus everything generated so far, so at most
    // max_len - 1 new tokens fit.
    let limit = max_new_tokens.min(params.config.max_len - 1);
    let mut generated: Vec<usize> = Vec::new();
    let mut truncated = true;
    while generated.len() < limit {
        let mut dec_input = Vec::with_capacity(generated.len() + 1);
        dec_input.push(BOS_ID);
        dec_input.extend_from_slice(&generated);
        let logits = bound.decoder_logits(&mut tape, enc, &dec_input)?;
        let last = tape.value(logits).row(dec_input.len() - 1);
        let mut best = EOS_ID;
        let mut best_score = f64::NEG_INFINITY;
        for (id, &score) in last.iter().enumerate() {
            if id == BOS_ID {
                continue;
            }
            if score > best_score {
                best_score = score;
                best = id;
            }
        }
        if best == EOS_ID {
            truncated = false;
            break;
        }
        generated.push(best);
    }
    Ok(Decoded { text: vocab.decode(&generated)?, token_ids: generated, truncated })
}
