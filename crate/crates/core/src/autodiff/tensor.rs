//! Dense 2-D matrices of `f64`, stored row-major.
//!
//! Everything that flows through the tape — parameters, activations, losses —
//! is one of these. Zero-sized dimensions are legal: an empty soft prompt is a
//! `0×d` matrix and concatenating it is a no-op.

use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    /// A `1×1` tensor holding `value`.
    pub fn scalar(value: f64) -> Self {
        Tensor::filled(1, 1, value)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "from_vec",
                format!("{} values cannot fill a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
    }

    /// I.i.d. Gaussian entries. `std == 0` degenerates to a constant fill.
    pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Self {
        if std == 0.0 {
            return Tensor::filled(rows, cols, mean);
        }
        let dist = Normal::new(mean, std).expect("finite mean/std");
        Tensor { rows, cols, data: (0..rows * cols).map(|_| dist.sample(rng)).collect() }
    }

    /// I.i.d. uniform entries on `[lo, hi)`.
    pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Self {
        if lo == hi {
            return Tensor::filled(rows, cols, lo);
        }
        Tensor { rows, cols, data: (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single entry of a `1×1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::dim("item", format!("expected 1x1, got {}x{}", self.rows, self.cols)));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination with another tensor of identical shape.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    /// `self · other` for `m×k` by `k×n`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let lhs_row = self.row(i);
            let out_row = out.row_mut(i);
            for (t, &a) in lhs_row.iter().enumerate().take(k) {
                let rhs_row = &other.data[t * n..(t + 1) * n];
                for j in 0..n {
                    out_row[j] += a * rhs_row[j];
                }
            }
        }
        out
    }

    /// `self · otherᵀ` for `m×k` by `n×k`.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension mismatch");
        let (m, n) = (self.rows, other.rows);
        Tensor::from_fn(m, n, |i, j| {
            self.row(i).iter().zip(other.row(j)).map(|(&a, &b)| a * b).sum()
        })
    }

    /// `selfᵀ · other` for `k×m` by `k×n`.
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension mismatch");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for t in 0..k {
            let lhs_row = self.row(t);
            let rhs_row = other.row(t);
            for (i, &a) in lhs_row.iter().enumerate().take(m) {
                let out_row = out.row_mut(i);
                for j in 0..n {
                    out_row[j] += a * rhs_row[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Tensor {
        Tensor::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Column sums as a `1×cols` row vector.
    pub fn col_sums(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                out.data[j] += v;
            }
        }
        out
    }

    /// Rows `lo..hi` as a new tensor.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Tensor {
        assert!(lo <= hi && hi <= self.rows, "slice_rows out of range");
        Tensor { rows: hi - lo, cols: self.cols, data: self.data[lo * self.cols..hi * self.cols].to_vec() }
    }

    /// Same data reinterpreted with a new shape (row-major order preserved).
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {}x{} as {rows}x{cols}", self.rows, self.cols),
            ));
        }
        Ok(Tensor { rows, cols, data: self.data.clone() })
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Tensor {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Tensor {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_against_hand_result() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_variants_agree_with_explicit_transpose() {
        let mut rng = crate::rng::stream(11, "tensor-test");
        let a = Tensor::gaussian(&mut rng, 4, 3, 0.0, 1.0);
        let b = Tensor::gaussian(&mut rng, 5, 3, 0.0, 1.0);
        assert_eq!(a.matmul_nt(&b).data(), a.matmul(&b.transpose()).data());
        let c = Tensor::gaussian(&mut rng, 4, 6, 0.0, 1.0);
        assert_eq!(a.matmul_tn(&c).data(), a.transpose().matmul(&c).data());
    }

    #[test]
    fn zero_sized_dimensions_are_legal() {
        let empty = Tensor::zeros(0, 8);
        assert_eq!(empty.shape(), (0, 8));
        assert!(empty.is_empty());
        let b = Tensor::zeros(8, 2);
        // 0x8 · 8x2 is a valid 0x2 product.
        assert_eq!(empty.matmul(&b).shape(), (0, 2));
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let t = Tensor::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = t.reshaped(3, 2).unwrap();
        assert_eq!(r.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r[(2, 1)], 5.0);
        assert!(t.reshaped(4, 2).is_err());
    }
}
