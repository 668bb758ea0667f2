//! The prompt autoencoder: a linear down-projection to `d_I` coordinates and
//! a one-hidden-layer tanh decoder back to flattened prompt space.
//!
//! Flattened prompts are `(n·d)×1` columns (row-major flattening of the
//! `n×d` prompt matrix). The encoder is `d = W_p·v + b_p`; the decoder is
//! `v* = W₂·tanh(W₁·d + b₁) + b₂`.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AutoencoderParams {
    /// Encoder weight, `d_I × (n·d)`.
    pub proj_w: Tensor,
    /// Encoder offset, `d_I × 1`.
    pub proj_b: Tensor,
    /// Decoder hidden weight, `d_h × d_I`.
    pub w1: Tensor,
    /// Decoder hidden offset, `d_h × 1`.
    pub b1: Tensor,
    /// Decoder output weight, `(n·d) × d_h`.
    pub w2: Tensor,
    /// Decoder output offset, `(n·d) × 1`.
    pub b2: Tensor,
}

impl AutoencoderParams {
    /// Fan-in-scaled uniform weights, zero offsets. When a prompt bank is
    /// known, pass its centroid (flattened) so the decoder starts centered on
    /// the data instead of at the origin.
    pub fn init(
        rng: &mut impl Rng,
        flat_dim: usize,
        latent_dim: usize,
        hidden_dim: usize,
        centroid: Option<&Tensor>,
    ) -> Result<AutoencoderParams> {
        if flat_dim == 0 || latent_dim == 0 || hidden_dim == 0 {
            return Err(Error::Usage("autoencoder dimensions must be positive".into()));
        }
        if latent_dim > flat_dim {
            return Err(Error::Usage(format!(
                "latent dimension {latent_dim} exceeds flattened prompt size {flat_dim}"
            )));
        }
        fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::uniform(rng, rows, cols, -bound, bound)
        }
        let b2 = match centroid {
            Some(c) => {
                if c.shape() != (flat_dim, 1) {
                    return Err(Error::dim(
                        "autoencoder_init",
                        format!("centroid {:?} vs expected {flat_dim}x1", c.shape()),
                    ));
                }
                c.clone()
            }
            None => Tensor::zeros(flat_dim, 1),
        };
        Ok(AutoencoderParams {
            proj_w: uniform(rng, latent_dim, flat_dim, flat_dim),
            proj_b: Tensor::zeros(latent_dim, 1),
            w1: uniform(rng, hidden_dim, latent_dim, latent_dim),
            b1: Tensor::zeros(hidden_dim, 1),
            w2: uniform(rng, flat_dim, hidden_dim, hidden_dim),
            b2,
        })
    }

    pub fn flat_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.proj_w.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    /// Scalar parameter count, split as (encoder, decoder).
    pub fn param_counts(&self) -> (usize, usize) {
        let enc = self.proj_w.len() + self.proj_b.len();
        let dec = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        (enc, dec)
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    /// Concrete encoder on a flattened prompt column.
    pub fn encode_flat(&self, v: &Tensor) -> Tensor {
        self.proj_w.matmul(v).add(&self.proj_b)
    }

    /// Concrete decoder on a latent column.
    pub fn decode_flat(&self, latent: &Tensor) -> Tensor {
        let h = self.w1.matmul(latent).add(&self.b1).map(f64::tanh);
        self.w2.matmul(&h).add(&self.b2)
    }

    /// Concrete round trip on a flattened prompt column.
    pub fn reconstruct_flat(&self, v: &Tensor) -> Tensor {
        self.decode_flat(&self.encode_flat(v))
    }
}

/// Closed-form (encoder, decoder) scalar parameter counts for the
/// autoencoder shapes, without constructing tensors.
pub fn autoencoder_param_counts(
    flat_dim: usize,
    latent_dim: usize,
    hidden_dim: usize,
) -> (usize, usize) {
    let encoder = latent_dim * flat_dim + latent_dim;
    let decoder = hidden_dim * latent_dim + hidden_dim + flat_dim * hidden_dim + flat_dim;
    (encoder, decoder)
}


/// Autoencoder parameters bound onto a tape.
pub struct BoundAutoencoder {
    pub proj_w: TensorId,
    pub proj_b: TensorId,
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

impl BoundAutoencoder {
    pub fn bind(tape: &mut Tape, params: &AutoencoderParams, trainable: bool) -> (BoundAutoencoder, Vec<TensorId>) {
        let ids: Vec<TensorId> =
            params.named_tensors().into_iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect();
        (
            BoundAutoencoder { proj_w: ids[0], proj_b: ids[1], w1: ids[2], b1: ids[3], w2: ids[4], b2: ids[5] },
            ids,
        )
    }

    /// Encoder: flattened prompt `(n·d)×1` to latent `d_I×1`.
    pub fn project(&self, tape: &mut Tape, v: TensorId) -> Result<TensorId> {
        let h = tape.matmul(self.proj_w, v)?;
        tape.add(h, self.proj_b)
    }

    /// Decoder: latent `d_I×1` to flattened prompt `(n·d)×1`.
    pub fn back_project(&self, tape: &mut Tape, latent: TensorId) -> Result<TensorId> {
        let h = tape.matmul(self.w1, latent)?;
        let h = tape.add(h, self.b1)?;
        let h = tape.tanh(h);
        let h = tape.matmul(self.w2, h)?;
        tape.add(h, self.b2)
    }

    /// Encoder followed by decoder.
    pub fn reconstruct(&self, tape: &mut Tape, v: TensorId) -> Result<TensorId> {
        let latent = self.project(tape, v)?;
        self.back_project(tape, latent)
    }
}
