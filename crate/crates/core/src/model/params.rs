//! Transformer configuration and parameters.
//!
//! A small pre-norm encoder–decoder. Multi-head attention is expressed with
//! per-head projection matrices (`d×d_h` query/key/value maps and a `d_h×d`
//! output map per head, summed over heads), which keeps the whole forward
//! pass inside plain matrix products and avoids any column-slicing machinery.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::vocab::NUM_SPECIALS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            ff_mult: 4,
            enc_layers: 2,
            dec_layers: 2,
            vocab_size: 128,
            max_len: 128,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: String| Error::Config { path: format!("model.{path}"), detail };
        if self.d_model == 0 {
            return Err(field("d_model", "must be positive".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(field(
                "n_heads",
                format!("must be a positive divisor of d_model={}, got {}", self.d_model, self.n_heads),
            ));
        }
        if self.ff_mult == 0 {
            return Err(field("ff_mult", "must be positive".into()));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(field("enc_layers", "encoder and decoder need at least one layer each".into()));
        }
        if self.vocab_size <= NUM_SPECIALS {
            return Err(field("vocab_size", format!("must exceed the {NUM_SPECIALS} special ids")));
        }
        if self.max_len < 2 {
            return Err(field("max_len", "must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub attn_gain: Tensor,
    pub attn: AttentionParams,
    pub ff_gain: Tensor,
    pub ff: FeedForwardParams,
}

#[derive(Debug, Clone)]
pub struct DecoderLayerParams {
    pub self_gain: Tensor,
    pub self_attn: AttentionParams,
    pub cross_gain: Tensor,
    pub cross_attn: AttentionParams,
    pub ff_gain: Tensor,
    pub ff: FeedForwardParams,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_emb: Tensor,
    pub enc_pos: Tensor,
    pub dec_pos: Tensor,
    pub enc_layers: Vec<EncoderLayerParams>,
    pub dec_layers: Vec<DecoderLayerParams>,
    pub enc_final_gain: Tensor,
    pub dec_final_gain: Tensor,
    pub w_out: Tensor,
}

fn named_attn<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, attn: &'a AttentionParams) {
    for (h, head) in attn.heads.iter().enumerate() {
        out.push((format!("{prefix}.h{h}.wq"), &head.wq));
        out.push((format!("{prefix}.h{h}.wk"), &head.wk));
        out.push((format!("{prefix}.h{h}.wv"), &head.wv));
        out.push((format!("{prefix}.h{h}.wo"), &head.wo));
    }
}

fn named_ff<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, ff: &'a FeedForwardParams) {
    out.push((format!("{prefix}.w1"), &ff.w1));
    out.push((format!("{prefix}.b1"), &ff.b1));
    out.push((format!("{prefix}.w2"), &ff.w2));
    out.push((format!("{prefix}.b2"), &ff.b2));
}

fn mut_attn<'a>(out: &mut Vec<&'a mut Tensor>, attn: &'a mut AttentionParams) {
    for head in attn.heads.iter_mut() {
        out.push(&mut head.wq);
        out.push(&mut head.wk);
        out.push(&mut head.wv);
        out.push(&mut head.wo);
    }
}

fn mut_ff<'a>(out: &mut Vec<&'a mut Tensor>, ff: &'a mut FeedForwardParams) {
    out.push(&mut ff.w1);
    out.push(&mut ff.b1);
    out.push(&mut ff.w2);
    out.push(&mut ff.b2);
}

/// How a parameter should be initialized.
enum Kind {
    Embedding,
    Weight,
    Gain,
    Bias,
}

fn build(config: &ModelConfig, mk: &mut impl FnMut(Kind, usize, usize) -> Tensor) -> ModelParams {
    let d = config.d_model;
    let dh = config.head_dim();
    let h = config.ff_mult * d;
    let attention = |mk: &mut dyn FnMut(Kind, usize, usize) -> Tensor| AttentionParams {
        heads: (0..config.n_heads)
            .map(|_| HeadParams {
                wq: mk(Kind::Weight, d, dh),
                wk: mk(Kind::Weight, d, dh),
                wv: mk(Kind::Weight, d, dh),
                wo: mk(Kind::Weight, dh, d),
            })
            .collect(),
    };
    let ff = |mk: &mut dyn FnMut(Kind, usize, usize) -> Tensor| FeedForwardParams {
        w1: mk(Kind::Weight, d, h),
        b1: mk(Kind::Bias, 1, h),
        w2: mk(Kind::Weight, h, d),
        b2: mk(Kind::Bias, 1, d),
    };
    ModelParams {
        config: config.clone(),
        token_emb: mk(Kind::Embedding, config.vocab_size, d),
        enc_pos: mk(Kind::Embedding, config.max_len, d),
        dec_pos: mk(Kind::Embedding, config.max_len, d),
        enc_layers: (0..config.enc_layers)
            .map(|_| EncoderLayerParams {
                attn_gain: mk(Kind::Gain, 1, d),
                attn: attention(mk),
                ff_gain: mk(Kind::Gain, 1, d),
                ff: ff(mk),
            })
            .collect(),
        dec_layers: (0..config.dec_layers)
            .map(|_| DecoderLayerParams {
                self_gain: mk(Kind::Gain, 1, d),
                self_attn: attention(mk),
                cross_gain: mk(Kind::Gain, 1, d),
                cross_attn: attention(mk),
                ff_gain: mk(Kind::Gain, 1, d),
                ff: ff(mk),
            })
            .collect(),
        enc_final_gain: mk(Kind::Gain, 1, d),
        dec_final_gain: mk(Kind::Gain, 1, d),
        w_out: mk(Kind::Weight, d, config.vocab_size),
    }
}

impl ModelParams {
    /// Random initialization: small Gaussian embeddings, fan-in-scaled
    /// Gaussian weights, unit gains, zero biases.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<ModelParams> {
        config.validate()?;
        Ok(build(config, &mut |kind, rows, cols| match kind {
            Kind::Embedding => Tensor::gaussian(rng, rows, cols, 0.0, 0.1),
            Kind::Weight => Tensor::gaussian(rng, rows, cols, 0.0, 1.0 / (rows as f64).sqrt()),
            Kind::Gain => Tensor::filled(rows, cols, 1.0),
            Kind::Bias => Tensor::zeros(rows, cols),
        }))
    }

    /// All-zero parameters with the right shapes (a loading target).
    pub fn zeros(config: &ModelConfig) -> Result<ModelParams> {
        config.validate()?;
        Ok(build(config, &mut |_, rows, cols| Tensor::zeros(rows, cols)))
    }

    /// Every tensor with a stable name, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("token_emb".into(), &self.token_emb));
        out.push(("enc_pos".into(), &self.enc_pos));
        out.push(("dec_pos".into(), &self.dec_pos));
        for (i, layer) in self.enc_layers.iter().enumerate() {
            out.push((format!("enc.{i}.attn_gain"), &layer.attn_gain));
            named_attn(&mut out, &format!("enc.{i}.attn"), &layer.attn);
            out.push((format!("enc.{i}.ff_gain"), &layer.ff_gain));
            named_ff(&mut out, &format!("enc.{i}.ff"), &layer.ff);
        }
        for (i, layer) in self.dec_layers.iter().enumerate() {
            out.push((format!("dec.{i}.self_gain"), &layer.self_gain));
            named_attn(&mut out, &format!("dec.{i}.self"), &layer.self_attn);
            out.push((format!("dec.{i}.cross_gain"), &layer.cross_gain));
            named_attn(&mut out, &format!("dec.{i}.cross"), &layer.cross_attn);
            out.push((format!("dec.{i}.ff_gain"), &layer.ff_gain));
            named_ff(&mut out, &format!("dec.{i}.ff"), &layer.ff);
        }
        out.push(("enc_final_gain".into(), &self.enc_final_gain));
        out.push(("dec_final_gain".into(), &self.dec_final_gain));
        out.push(("w_out".into(), &self.w_out));
        out
    }

    /// Mutable references to every tensor, in the same canonical order as
    /// [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut self.token_emb);
        out.push(&mut self.enc_pos);
        out.push(&mut self.dec_pos);
        for layer in self.enc_layers.iter_mut() {
            out.push(&mut layer.attn_gain);
            mut_attn(&mut out, &mut layer.attn);
            out.push(&mut layer.ff_gain);
            mut_ff(&mut out, &mut layer.ff);
        }
        for layer in self.dec_layers.iter_mut() {
            out.push(&mut layer.self_gain);
            mut_attn(&mut out, &mut layer.self_attn);
            out.push(&mut layer.cross_gain);
            mut_attn(&mut out, &mut layer.cross_attn);
            out.push(&mut layer.ff_gain);
            mut_ff(&mut out, &mut layer.ff);
        }
        out.push(&mut self.enc_final_gain);
        out.push(&mut self.dec_final_gain);
        out.push(&mut self.w_out);
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over names, shapes, and exact bit patterns; two parameter sets
    /// share a checksum iff they are bitwise identical.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.named_tensors() {
            hasher.update(name.as_bytes());
            hasher.update((t.rows() as u64).to_le_bytes());
            hasher.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
