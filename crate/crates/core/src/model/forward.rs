//! Tape-side forward pass: encode, decode logits, and sequence loss.
//!
//! Parameters are bound onto a tape once per step ([`BoundModel::bind`]); the
//! returned structure mirrors [`ModelParams`] with tape handles. A soft
//! prompt, when present, is a free `n×d_model` matrix stacked ahead of the
//! embedded input tokens; prompt rows carry no positional component.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams};
use crate::model::vocab::{BOS_ID, EOS_ID};

/// Epsilon inside the root-mean-square normalizer.
pub const RMS_EPS: f64 = 1e-6;

struct BoundHead {
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    wo: TensorId,
}

struct BoundAttention {
    heads: Vec<BoundHead>,
}

struct BoundFeedForward {
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

struct BoundEncoderLayer {
    attn_gain: TensorId,
    attn: BoundAttention,
    ff_gain: TensorId,
    ff: BoundFeedForward,
}

struct BoundDecoderLayer {
    self_gain: TensorId,
    self_attn: BoundAttention,
    cross_gain: TensorId,
    cross_attn: BoundAttention,
    ff_gain: TensorId,
    ff: BoundFeedForward,
}

/// A model whose parameters live on a tape.
pub struct BoundModel {
    config: ModelConfig,
    token_emb: TensorId,
    enc_pos: TensorId,
    dec_pos: TensorId,
    enc_layers: Vec<BoundEncoderLayer>,
    dec_layers: Vec<BoundDecoderLayer>,
    enc_final_gain: TensorId,
    dec_final_gain: TensorId,
    w_out: TensorId,
}

/// Reads tape ids in the canonical parameter order.
struct Cursor<'a> {
    ids: &'a [TensorId],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<TensorId> {
        let id = self.ids.get(self.at).copied().ok_or_else(|| {
            Error::Usage(format!("model binding expected more than {} parameter tensors", self.ids.len()))
        })?;
        self.at += 1;
        Ok(id)
    }

    fn attention(&mut self, n_heads: usize) -> Result<BoundAttention> {
        let heads = (0..n_heads)
            .map(|_| {
                Ok(BoundHead { wq: self.next()?, wk: self.next()?, wv: self.next()?, wo: self.next()? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundAttention { heads })
    }

    fn feed_forward(&mut self) -> Result<BoundFeedForward> {
        Ok(BoundFeedForward { w1: self.next()?, b1: self.next()?, w2: self.next()?, b2: self.next()? })
    }
}

impl BoundModel {
    /// Insert every parameter tensor as a tape leaf (all trainable or all
    /// frozen) and return the bound model together with the leaf ids in
    /// canonical order.
    pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Result<(BoundModel, Vec<TensorId>)> {
        let ids: Vec<TensorId> =
            params.named_tensors().into_iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect();
        let bound = BoundModel::from_ids(&params.config, &ids)?;
        Ok((bound, ids))
    }

    /// Assemble a bound model from pre-inserted leaves in canonical order.
    pub fn from_ids(config: &ModelConfig, ids: &[TensorId]) -> Result<BoundModel> {
        config.validate()?;
        let mut cur = Cursor { ids, at: 0 };
        let token_emb = cur.next()?;
        let enc_pos = cur.next()?;
        let dec_pos = cur.next()?;
        let enc_layers = (0..config.enc_layers)
            .map(|_| {
                Ok(BoundEncoderLayer {
                    attn_gain: cur.next()?,
                    attn: cur.attention(config.n_heads)?,
                    ff_gain: cur.next()?,
                    ff: cur.feed_forward()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dec_layers = (0..config.dec_layers)
            .map(|_| {
                Ok(BoundDecoderLayer {
                    self_gain: cur.next()?,
                    self_attn: cur.attention(config.n_heads)?,
                    cross_gain: cur.next()?,
                    cross_attn: cur.attention(config.n_heads)?,
                    ff_gain: cur.next()?,
                    ff: cur.feed_forward()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let enc_final_gain = cur.next()?;
        let dec_final_gain = cur.next()?;
        let w_out = cur.next()?;
        if cur.at != ids.len() {
            return Err(Error::Usage(format!(
                "model binding consumed {} of {} parameter tensors",
                cur.at,
                ids.len()
            )));
        }
        Ok(BoundModel {
            config: config.clone(),
            token_emb,
            enc_pos,
            dec_pos,
            enc_layers,
            dec_layers,
            enc_final_gain,
            dec_final_gain,
            w_out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Multi-head attention: per-head `d×d_h` projections, scaled dot-product
    /// weights, and per-head `d_h×d` output maps summed over heads.
    fn attention(
        &self,
        tape: &mut Tape,
        queries: TensorId,
        keys_values: TensorId,
        attn: &BoundAttention,
        causal: bool,
    ) -> Result<TensorId> {
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut out: Option<TensorId> = None;
        for head in &attn.heads {
            let q = tape.matmul(queries, head.wq)?;
            let k = tape.matmul(keys_values, head.wk)?;
            let v = tape.matmul(keys_values, head.wv)?;
            let scores = tape.matmul_nt(q, k)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.row_softmax(scores, causal)?;
            let context = tape.matmul(weights, v)?;
            let projected = tape.matmul(context, head.wo)?;
            out = Some(match out {
                Some(acc) => tape.add(acc, projected)?,
                None => projected,
            });
        }
        out.ok_or_else(|| Error::Usage("attention needs at least one head".into()))
    }

    fn feed_forward(&self, tape: &mut Tape, x: TensorId, ff: &BoundFeedForward) -> Result<TensorId> {
        let h = tape.matmul(x, ff.w1)?;
        let h = tape.add(h, ff.b1)?;
        let h = tape.tanh(h);
        let h = tape.matmul(h, ff.w2)?;
        tape.add(h, ff.b2)
    }

    /// Embed `input_ids`, prepend the prompt if given, and run the encoder
    /// stack. Returns the normalized `(prompt_rows + len)×d` memory.
    pub fn encode(&self, tape: &mut Tape, prompt: Option<TensorId>, input_ids: &[usize]) -> Result<TensorId> {
        if input_ids.len() > self.config.max_len {
            return Err(Error::Usage(format!(
                "input of {} tokens exceeds max_len {}",
                input_ids.len(),
                self.config.max_len
            )));
        }
        let tok = tape.embedding_lookup(self.token_emb, input_ids)?;
        let positions: Vec<usize> = (0..input_ids.len()).collect();
        let pos = tape.embedding_lookup(self.enc_pos, &positions)?;
        let mut x = tape.add(tok, pos)?;
        if let Some(p) = prompt {
            x = tape.concat_rows(p, x)?;
        }
        for layer in &self.enc_layers {
            let normed = tape.rms_norm(x, layer.attn_gain, RMS_EPS)?;
            let a = self.attention(tape, normed, normed, &layer.attn, false)?;
            x = tape.add(x, a)?;
            let normed = tape.rms_norm(x, layer.ff_gain, RMS_EPS)?;
            let f = self.feed_forward(tape, normed, &layer.ff)?;
            x = tape.add(x, f)?;
        }
        tape.rms_norm(x, self.enc_final_gain, RMS_EPS)
    }

    /// Teacher-forced decoder pass over `dec_input_ids` (which starts with
    /// the begin marker). Returns one row of vocabulary logits per position.
    pub fn decoder_logits(&self, tape: &mut Tape, enc_out: TensorId, dec_input_ids: &[usize]) -> Result<TensorId> {
        if dec_input_ids.len() > self.config.max_len {
            return Err(Error::Usage(format!(
                "decoder input of {} tokens exceeds max_len {}",
                dec_input_ids.len(),
                self.config.max_len
            )));
        }
        let tok = tape.embedding_lookup(self.token_emb, dec_input_ids)?;
        let positions: Vec<usize> = (0..dec_input_ids.len()).collect();
        let pos = tape.embedding_lookup(self.dec_pos, &positions)?;
        let mut x = tape.add(tok, pos)?;
        for layer in &self.dec_layers {
            let normed = tape.rms_norm(x, layer.self_gain, RMS_EPS)?;
            let a = self.attention(tape, normed, normed, &layer.self_attn, true)?;
            x = tape.add(x, a)?;
            let normed = tape.rms_norm(x, layer.cross_gain, RMS_EPS)?;
            let c = self.attention(tape, normed, enc_out, &layer.cross_attn, false)?;
            x = tape.add(x, c)?;
            let normed = tape.rms_norm(x, layer.ff_gain, RMS_EPS)?;
            let f = self.feed_forward(tape, normed, &layer.ff)?;
            x = tape.add(x, f)?;
        }
        let x = tape.rms_norm(x, self.dec_final_gain, RMS_EPS)?;
        tape.matmul(x, self.w_out)
    }

    /// Mean negative log-likelihood of `target_ids` followed by the end
    /// marker, under teacher forcing.
    pub fn sequence_loss(
        &self,
        tape: &mut Tape,
        prompt: Option<TensorId>,
        input_ids: &[usize],
        target_ids: &[usize],
    ) -> Result<TensorId> {
        let enc = self.encode(tape, prompt, input_ids)?;
        let mut dec_input = Vec::with_capacity(target_ids.len() + 1);
        dec_input.push(BOS_ID);
        dec_input.extend_from_slice(target_ids);
        let logits = self.decoder_logits(tape, enc, &dec_input)?;
        let mut targets: Vec<Option<usize>> = target_ids.iter().map(|&t| Some(t)).collect();
        targets.push(Some(EOS_ID));
        tape.softmax_cross_entropy(logits, &targets)
    }

    /// Mean of per-example sequence losses over a batch.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        prompt: Option<TensorId>,
        batch: &[(Vec<usize>, Vec<usize>)],
    ) -> Result<TensorId> {
        if batch.is_empty() {
            return Err(Error::Usage("cannot compute a loss over an empty batch".into()));
        }
        let mut acc: Option<TensorId> = None;
        for (input, target) in batch {
            let loss = self.sequence_loss(tape, prompt, input, target)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, loss)?,
                None => loss,
            });
        }
        Ok(tape.scale(acc.expect("non-empty batch"), 1.0 / batch.len() as f64))
    }
}
