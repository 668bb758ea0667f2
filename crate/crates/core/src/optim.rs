//! AdamW with bias correction and decoupled weight decay.
//!
//! The optimizer is purely elementwise, so two training runs whose parameter
//! vectors are reshaped views of each other (for example a direct `n×d`
//! prompt versus its flattened coordinates) produce bitwise-identical
//! trajectories given identical gradients.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig { lr, ..Default::default() }
    }
}

struct Slot {
    m: Tensor,
    v: Tensor,
}

pub struct AdamW {
    cfg: AdamWConfig,
    t: u32,
    slots: Vec<Slot>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, t: 0, slots: Vec::new() }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// Apply one update. `params[i]` is updated in place using `grads[i]`.
    /// The parameter list must be identical (same order, same shapes) across
    /// calls; moment slots are allocated on first use.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!(
                "optimizer got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot { m: Tensor::zeros(p.rows(), p.cols()), v: Tensor::zeros(p.rows(), p.cols()) })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer was initialized with {} parameters, got {}",
                self.slots.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = &self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((param, grad), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            if param.shape() != grad.shape() {
                return Err(Error::dim(
                    "adamw",
                    format!("parameter {:?} vs gradient {:?}", param.shape(), grad.shape()),
                ));
            }
            if !grad.is_finite() {
                return Err(Error::numeric("adamw", "non-finite gradient"));
            }
            let p = param.data_mut();
            let g = grad.data();
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        }
        Ok(())
    }
}
