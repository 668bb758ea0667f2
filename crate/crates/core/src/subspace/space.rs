//! A tuning subspace: a low-dimensional coordinate system together with a
//! frozen map from coordinates back to full `n×d` prompt matrices.

use serde_json::json;

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::orthonormal_rows;
use crate::subspace::autoencoder::{AutoencoderParams, BoundAutoencoder};

pub const SUBSPACE_KIND: &str = "subspace";

/// How coordinates map back to flattened prompt space.
#[derive(Debug, Clone)]
pub enum BackProjection {
    /// Learned nonlinear decoder (the autoencoder's decoder half; the encoder
    /// half is kept so prompts can still be projected into the space).
    Mlp(AutoencoderParams),
    /// Affine map `v = matrix·θ + offset`. `matrix` is `(n·d) × d_I` and must
    /// have orthonormal columns so projection is its transpose.
    Linear { matrix: Tensor, offset: Tensor },
    /// Coordinates are the flattened prompt itself (`d_I = n·d`).
    Identity,
}

#[derive(Debug, Clone)]
pub struct Subspace {
    rows: usize,
    cols: usize,
    dim: usize,
    pub map: BackProjection,
}

impl Subspace {
    pub fn new(rows: usize, cols: usize, dim: usize, map: BackProjection) -> Result<Subspace> {
        let flat = rows * cols;
        if flat == 0 || dim == 0 {
            return Err(Error::Usage("subspace dimensions must be positive".into()));
        }
        match &map {
            BackProjection::Mlp(ae) => {
                if ae.flat_dim() != flat || ae.latent_dim() != dim {
                    return Err(Error::dim(
                        "subspace_new",
                        format!(
                            "autoencoder maps {} -> {} but subspace wants {dim} -> {flat}",
                            ae.latent_dim(),
                            ae.flat_dim()
                        ),
                    ));
                }
            }
            BackProjection::Linear { matrix, offset } => {
                if matrix.shape() != (flat, dim) {
                    return Err(Error::dim(
                        "subspace_new",
                        format!("linear matrix {:?} vs expected {flat}x{dim}", matrix.shape()),
                    ));
                }
                if offset.shape() != (flat, 1) {
                    return Err(Error::dim(
                        "subspace_new",
                        format!("linear offset {:?} vs expected {flat}x1", offset.shape()),
                    ));
                }
            }
            BackProjection::Identity => {
                if dim != flat {
                    return Err(Error::dim(
                        "subspace_new",
                        format!("identity map needs dim = {flat}, got {dim}"),
                    ));
                }
            }
        }
        Ok(Subspace { rows, cols, dim, map })
    }

    /// An identity subspace over `rows×cols` prompts: tuning its coordinates
    /// is plain prompt tuning in a different shape.
    pub fn identity(rows: usize, cols: usize) -> Result<Subspace> {
        Subspace::new(rows, cols, rows * cols, BackProjection::Identity)
    }

    /// A random affine subspace through `anchor` (usually the shared prompt
    /// initialization) with an orthonormal basis.
    pub fn random(rng: &mut impl rand::Rng, rows: usize, cols: usize, dim: usize, anchor: &Tensor) -> Result<Subspace> {
        let flat = rows * cols;
        if anchor.shape() != (rows, cols) {
            return Err(Error::dim(
                "subspace_random",
                format!("anchor {:?} vs prompt {rows}x{cols}", anchor.shape()),
            ));
        }
        if dim > flat {
            return Err(Error::Usage(format!(
                "subspace dimension {dim} exceeds flattened prompt size {flat}"
            )));
        }
        let basis = orthonormal_rows(rng, dim, flat)?; // dim × flat
        let matrix = basis.transpose(); // flat × dim, orthonormal columns
        let offset = anchor.reshaped(flat, 1)?;
        Subspace::new(rows, cols, dim, BackProjection::Linear { matrix, offset })
    }

    /// The untrained reference baseline: a fixed linear map `θ ↦ R·θ` whose
    /// entries are drawn i.i.d. Gaussian scaled by `1/√d_I`, with zero
    /// offset. Columns are only approximately orthogonal (exactly so in the
    /// large-`n·d` limit), so unlike [`Subspace::random`] the `project`
    /// round-trip is approximate.
    pub fn random_gaussian(
        rng: &mut impl rand::Rng,
        rows: usize,
        cols: usize,
        dim: usize,
    ) -> Result<Subspace> {
        let flat = rows * cols;
        if dim == 0 || flat == 0 {
            return Err(Error::Usage("subspace dimensions must be positive".into()));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let matrix = Tensor::gaussian(rng, flat, dim, 0.0, scale);
        let offset = Tensor::zeros(flat, 1);
        Subspace::new(rows, cols, dim, BackProjection::Linear { matrix, offset })
    }

    pub fn prompt_rows(&self) -> usize {
        self.rows
    }

    pub fn prompt_cols(&self) -> usize {
        self.cols
    }

    /// Coordinate dimension `d_I`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_theta(&self, theta: &Tensor) -> Result<()> {
        if theta.shape() != (self.dim, 1) {
            return Err(Error::dim(
                "back_project",
                format!("coordinates {:?} vs expected {}x1", theta.shape(), self.dim),
            ));
        }
        Ok(())
    }

    /// Map coordinates `d_I×1` to a concrete `n×d` prompt matrix.
    pub fn back_project(&self, theta: &Tensor) -> Result<Tensor> {
        self.check_theta(theta)?;
        let flat = match &self.map {
            BackProjection::Mlp(ae) => ae.decode_flat(theta),
            BackProjection::Linear { matrix, offset } => matrix.matmul(theta).add(offset),
            BackProjection::Identity => theta.clone(),
        };
        flat.reshaped(self.rows, self.cols)
    }

    /// Same map, built on a tape with the map parameters held constant, so
    /// gradients flow only into the coordinates.
    pub fn back_project_on_tape(&self, tape: &mut Tape, theta: TensorId) -> Result<TensorId> {
        let got = tape.shape(theta);
        if got != (self.dim, 1) {
            return Err(Error::dim(
                "back_project",
                format!("coordinates {}x{} vs expected {}x1", got.0, got.1, self.dim),
            ));
        }
        let flat = match &self.map {
            BackProjection::Mlp(ae) => {
                let (bound, _) = BoundAutoencoder::bind(tape, ae, false);
                bound.back_project(tape, theta)?
            }
            BackProjection::Linear { matrix, offset } => {
                let m = tape.constant(matrix.clone());
                let o = tape.constant(offset.clone());
                let v = tape.matmul(m, theta)?;
                tape.add(v, o)?
            }
            BackProjection::Identity => theta,
        };
        tape.reshape(flat, self.rows, self.cols)
    }

    /// Map a full prompt matrix to coordinates. For the linear map this is
    /// exact only because the basis is orthonormal; for the autoencoder it is
    /// the learned encoder, not an inverse.
    pub fn project(&self, prompt: &Tensor) -> Result<Tensor> {
        if prompt.shape() != (self.rows, self.cols) {
            return Err(Error::dim(
                "project",
                format!("prompt {:?} vs expected {}x{}", prompt.shape(), self.rows, self.cols),
            ));
        }
        let v = prompt.reshaped(self.rows * self.cols, 1)?;
        match &self.map {
            BackProjection::Mlp(ae) => Ok(ae.encode_flat(&v)),
            BackProjection::Linear { matrix, offset } => Ok(matrix.matmul_tn(&v.sub(offset))),
            BackProjection::Identity => Ok(v),
        }
    }

    /// Encoder followed by decoder, as concrete tensors.
    pub fn reconstruct(&self, prompt: &Tensor) -> Result<Tensor> {
        let theta = self.project(prompt)?;
        self.back_project(&theta)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(SUBSPACE_KIND, config_hash);
        ck.set_meta("rows", json!(self.rows));
        ck.set_meta("cols", json!(self.cols));
        ck.set_meta("dim", json!(self.dim));
        match &self.map {
            BackProjection::Mlp(ae) => {
                ck.set_meta("variant", json!("mlp"));
                for (name, t) in ae.named_tensors() {
                    ck.insert(name, t.clone());
                }
            }
            BackProjection::Linear { matrix, offset } => {
                ck.set_meta("variant", json!("linear"));
                ck.insert("matrix", matrix.clone());
                ck.insert("offset", offset.clone());
            }
            BackProjection::Identity => {
                ck.set_meta("variant", json!("identity"));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Subspace> {
        ck.expect_kind(SUBSPACE_KIND)?;
        let dims = |key: &str| -> Result<usize> {
            ck.meta
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Usage(format!("subspace checkpoint missing meta field {key}")))
        };
        let rows = dims("rows")?;
        let cols = dims("cols")?;
        let dim = dims("dim")?;
        let variant = ck.meta_str("variant")?;
        let tensor = |name: &str| -> Result<Tensor> {
            ck.get(name)
                .cloned()
                .ok_or_else(|| Error::Usage(format!("subspace checkpoint missing tensor {name}")))
        };
        let map = match variant {
            "mlp" => BackProjection::Mlp(AutoencoderParams {
                proj_w: tensor("proj_w")?,
                proj_b: tensor("proj_b")?,
                w1: tensor("w1")?,
                b1: tensor("b1")?,
                w2: tensor("w2")?,
                b2: tensor("b2")?,
            }),
            "linear" => BackProjection::Linear { matrix: tensor("matrix")?, offset: tensor("offset")? },
            "identity" => BackProjection::Identity,
            other => return Err(Error::Usage(format!("unknown subspace variant {other:?}"))),
        };
        Subspace::new(rows, cols, dim, map)
    }
}
