//! Small dense linear-algebra helpers shared by the subspace and analysis code.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A `k×dim` matrix with orthonormal rows, built by Gram–Schmidt over
/// Gaussian draws. Degenerate draws are rejected and redrawn.
pub fn orthonormal_rows(rng: &mut impl Rng, k: usize, dim: usize) -> Result<Tensor> {
    if k > dim {
        return Err(Error::Usage(format!("cannot fit {k} orthonormal rows in {dim} dimensions")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while rows.len() < k {
        attempts += 1;
        if attempts > 100 * k {
            return Err(Error::numeric("orthonormal_rows", "repeated degenerate draws"));
        }
        let mut v: Vec<f64> = Tensor::gaussian(rng, 1, dim, 0.0, 1.0).data().to_vec();
        for prev in &rows {
            let proj: f64 = dot(&v, prev);
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= proj * pi;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        rows.push(v);
    }
    Tensor::from_vec(k, dim, rows.concat())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
