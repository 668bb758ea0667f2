//! Reverse-mode differentiation on an append-only operation tape.
//!
//! A [`Tape`] owns every intermediate value of one forward computation.
//! Operations validate shapes eagerly, record which nodes they read, and
//! [`Tape::backward`] replays the recording in reverse, accumulating
//! vector–Jacobian products. Gradients are only materialized for nodes that
//! can reach a leaf marked `requires_grad`, so frozen parameters (a fixed
//! backbone, a fixed decoder of a subspace) cost nothing on the way back.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The recorded operation that produced a node.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a · b`
    MatMul { a: TensorId, b: TensorId },
    /// `a · bᵀ`
    MatMulNt { a: TensorId, b: TensorId },
    /// Elementwise `a + b`; with `broadcast_b`, `b` is a `1×n` row added to every row of `a`.
    Add { a: TensorId, b: TensorId, broadcast_b: bool },
    /// `top` stacked above `bottom`.
    ConcatRows { top: TensorId, bottom: TensorId },
    Tanh { x: TensorId },
    /// Row `ids[i]` of `table` becomes row `i` of the output.
    EmbeddingLookup { table: TensorId, ids: Vec<usize> },
    /// Mean negative log-softmax of the target class per row; `None` rows are skipped.
    SoftmaxCrossEntropy { logits: TensorId, targets: Vec<Option<usize>> },
    /// `Σ (a - b)²` over all entries, as a `1×1` tensor.
    SquaredErrorSum { a: TensorId, b: TensorId },
    Scale { x: TensorId, factor: f64 },
    /// Softmax over each row. The backward pass needs no mask record: masked
    /// entries have zero output and therefore zero gradient.
    RowSoftmax { x: TensorId },
    /// Per-row `x / sqrt(mean(x²) + eps)`, scaled columnwise by `gain`.
    RmsNorm { x: TensorId, gain: TensorId, eps: f64 },
    Reshape { x: TensorId },
}

impl Op {
    fn inputs(&self) -> Vec<TensorId> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul { a, b }
            | Op::MatMulNt { a, b }
            | Op::Add { a, b, .. }
            | Op::SquaredErrorSum { a, b } => vec![a, b],
            Op::ConcatRows { top, bottom } => vec![top, bottom],
            Op::Tanh { x } | Op::Scale { x, .. } | Op::RowSoftmax { x, .. } | Op::Reshape { x } => {
                vec![x]
            }
            Op::EmbeddingLookup { table, .. } => vec![table],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
            Op::RmsNorm { x, gain, .. } => vec![x, gain],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`TensorId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, if any flowed there.
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for `id`.
    pub fn take(&mut self, id: TensorId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input node. Gradients are tracked only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Insert a non-differentiable input node.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node { value, op, requires_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> TensorId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// `a · b` for `m×k` by `k×n`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::dim("matmul", format!("{ar}x{ac} · {br}x{bc}")));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push_op(value, Op::MatMul { a, b }))
    }

    /// `a · bᵀ` for `m×k` by `n×k`.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(Error::dim("matmul_nt", format!("{ar}x{ac} · ({br}x{bc})ᵀ")));
        }
        let value = self.value(a).matmul_nt(self.value(b));
        Ok(self.push_op(value, Op::MatMulNt { a, b }))
    }

    /// Elementwise sum. If `b` is a `1×n` row and `a` is `m×n`, `b` is
    /// broadcast over the rows of `a` (the bias case).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) == (br, bc) {
            let value = self.value(a).add(self.value(b));
            return Ok(self.push_op(value, Op::Add { a, b, broadcast_b: false }));
        }
        if br == 1 && bc == ac {
            let bias = self.value(b).row(0).to_vec();
            let av = self.value(a);
            let value = Tensor::from_fn(ar, ac, |i, j| av[(i, j)] + bias[j]);
            return Ok(self.push_op(value, Op::Add { a, b, broadcast_b: true }));
        }
        Err(Error::dim("add", format!("{ar}x{ac} + {br}x{bc}")))
    }

    /// Stack `top` above `bottom`. Either side may have zero rows.
    pub fn concat_rows(&mut self, top: TensorId, bottom: TensorId) -> Result<TensorId> {
        let (tr, tc) = self.shape(top);
        let (br, bc) = self.shape(bottom);
        if tc != bc {
            return Err(Error::dim("concat_rows", format!("{tr}x{tc} over {br}x{bc}")));
        }
        let mut data = Vec::with_capacity((tr + br) * tc);
        data.extend_from_slice(self.value(top).data());
        data.extend_from_slice(self.value(bottom).data());
        let value = Tensor::from_vec(tr + br, tc, data)?;
        Ok(self.push_op(value, Op::ConcatRows { top, bottom }))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).map(f64::tanh);
        self.push_op(value, Op::Tanh { x })
    }

    /// Gather rows of `table` by token id.
    pub fn embedding_lookup(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (vocab, dim) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocab(format!("token id {bad} out of range for a {vocab}-row table")));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::from_vec(ids.len(), dim, data)?;
        Ok(self.push_op(value, Op::EmbeddingLookup { table, ids: ids.to_vec() }))
    }

    /// Mean negative log-likelihood of the target class under a row-wise
    /// softmax of `logits`. Rows with target `None` are excluded from the
    /// mean; at least one row must carry a target.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[Option<usize>],
    ) -> Result<TensorId> {
        let (rows, classes) = self.shape(logits);
        if targets.len() != rows {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} targets for {rows} logit rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= classes) {
            return Err(Error::Vocab(format!("target class {bad} out of range for {classes} classes")));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Usage("cross entropy needs at least one target position".into()));
        }
        let lv = self.value(logits);
        let mut total = 0.0;
        for (i, target) in targets.iter().enumerate() {
            if let Some(t) = target {
                total += log_sum_exp(lv.row(i)) - lv[(i, *t)];
            }
        }
        let value = Tensor::scalar(total / count as f64);
        Ok(self.push_op(value, Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec() }))
    }

    /// `Σ (a - b)²` over all entries.
    pub fn squared_error_sum(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::dim("squared_error_sum", format!("{ar}x{ac} vs {br}x{bc}")));
        }
        let diff = self.value(a).sub(self.value(b));
        Ok(self.push_op(Tensor::scalar(diff.frob_sq()), Op::SquaredErrorSum { a, b }))
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let value = self.value(x).scale(factor);
        self.push_op(value, Op::Scale { x, factor })
    }

    /// Softmax over each row. With `causal`, entry `(i, j)` for `j > i` is
    /// masked out before normalizing, which requires a square input.
    pub fn row_softmax(&mut self, x: TensorId, causal: bool) -> Result<TensorId> {
        let (rows, cols) = self.shape(x);
        if causal && rows != cols {
            return Err(Error::dim("row_softmax", format!("causal mask needs a square input, got {rows}x{cols}")));
        }
        if cols == 0 && rows > 0 {
            return Err(Error::dim("row_softmax", format!("cannot normalize zero-width rows ({rows}x0)")));
        }
        let xv = self.value(x);
        let mut value = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let visible = if causal { i + 1 } else { cols };
            let row = &xv.row(i)[..visible];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                value[(i, j)] = e;
                denom += e;
            }
            for j in 0..visible {
                value[(i, j)] /= denom;
            }
        }
        Ok(self.push_op(value, Op::RowSoftmax { x }))
    }

    /// Root-mean-square normalization of each row of `x`, scaled columnwise
    /// by the `1×n` row `gain`.
    pub fn rms_norm(&mut self, x: TensorId, gain: TensorId, eps: f64) -> Result<TensorId> {
        let (rows, cols) = self.shape(x);
        let gshape = self.shape(gain);
        if gshape != (1, cols) {
            return Err(Error::dim("rms_norm", format!("gain {}x{} for input {rows}x{cols}", gshape.0, gshape.1)));
        }
        if cols == 0 && rows > 0 {
            return Err(Error::dim("rms_norm", format!("cannot normalize zero-width rows ({rows}x0)")));
        }
        let xv = self.value(x);
        let gv = self.value(gain).row(0).to_vec();
        let mut value = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let inv_rms = 1.0 / row_rms(xv.row(i), eps);
            for (j, &g) in gv.iter().enumerate() {
                value[(i, j)] = g * xv[(i, j)] * inv_rms;
            }
        }
        Ok(self.push_op(value, Op::RmsNorm { x, gain, eps }))
    }

    /// View the same entries under a new shape (row-major order preserved).
    pub fn reshape(&mut self, x: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let value = self.value(x).reshaped(rows, cols)?;
        Ok(self.push_op(value, Op::Reshape { x }))
    }

    /// Reverse sweep from a scalar `loss` node. Returns one gradient per node
    /// that both requires a gradient and is reached by the sweep.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::dim("backward", format!("loss must be 1x1, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            // The loss is disconnected from every tracked parameter.
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else { continue };
            self.propagate(idx, &up, &mut grads);
            grads[idx] = Some(up);
        }
        Ok(Gradients { grads })
    }

    /// Add this node's vector–Jacobian products into its inputs' gradient slots.
    fn propagate(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: TensorId, delta: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            debug_assert_eq!(delta.shape(), self.shape(id), "gradient shape mismatch");
            match &mut grads[id.0] {
                Some(g) => g.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                if self.requires_grad(*a) {
                    acc(*a, up.matmul_nt(self.value(*b)));
                }
                if self.requires_grad(*b) {
                    acc(*b, self.value(*a).matmul_tn(up));
                }
            }
            Op::MatMulNt { a, b } => {
                if self.requires_grad(*a) {
                    acc(*a, up.matmul(self.value(*b)));
                }
                if self.requires_grad(*b) {
                    acc(*b, up.matmul_tn(self.value(*a)));
                }
            }
            Op::Add { a, b, broadcast_b } => {
                acc(*a, up.clone());
                if *broadcast_b {
                    acc(*b, up.col_sums());
                } else {
                    acc(*b, up.clone());
                }
            }
            Op::ConcatRows { top, bottom } => {
                let split = self.shape(*top).0;
                acc(*top, up.slice_rows(0, split));
                acc(*bottom, up.slice_rows(split, up.rows()));
            }
            Op::Tanh { x } => {
                acc(*x, up.zip_map(&node.value, |u, y| u * (1.0 - y * y)));
            }
            Op::EmbeddingLookup { table, ids } => {
                let (vocab, dim) = self.shape(*table);
                let mut delta = Tensor::zeros(vocab, dim);
                for (i, &id) in ids.iter().enumerate() {
                    let src = up.row(i);
                    let dst = delta.row_mut(id);
                    for j in 0..dim {
                        dst[j] += src[j];
                    }
                }
                acc(*table, delta);
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let u = up[(0, 0)];
                let count = targets.iter().flatten().count() as f64;
                let lv = self.value(*logits);
                let (rows, cols) = lv.shape();
                let mut delta = Tensor::zeros(rows, cols);
                for (i, target) in targets.iter().enumerate() {
                    if let Some(t) = target {
                        softmax_into(lv.row(i), delta.row_mut(i));
                        let row = delta.row_mut(i);
                        row[*t] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= u / count;
                        }
                    }
                }
                acc(*logits, delta);
            }
            Op::SquaredErrorSum { a, b } => {
                let u = up[(0, 0)];
                let diff = self.value(*a).sub(self.value(*b));
                if self.requires_grad(*a) {
                    acc(*a, diff.scale(2.0 * u));
                }
                if self.requires_grad(*b) {
                    acc(*b, diff.scale(-2.0 * u));
                }
            }
            Op::Scale { x, factor } => {
                acc(*x, up.scale(*factor));
            }
            Op::RowSoftmax { x, .. } => {
                // Masked entries have y = 0, so they contribute nothing.
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut delta = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    let dot: f64 = y.row(i).iter().zip(up.row(i)).map(|(&yv, &uv)| yv * uv).sum();
                    for j in 0..cols {
                        delta[(i, j)] = y[(i, j)] * (up[(i, j)] - dot);
                    }
                }
                acc(*x, delta);
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (rows, cols) = xv.shape();
                let mut dx = Tensor::zeros(rows, cols);
                let mut dg = Tensor::zeros(1, cols);
                for i in 0..rows {
                    let rms = row_rms(xv.row(i), *eps);
                    let inv = 1.0 / rms;
                    // c = Σ_j up_ij · g_j · x_ij, shared by every column of the row.
                    let mut c = 0.0;
                    for j in 0..cols {
                        c += up[(i, j)] * gv[(0, j)] * xv[(i, j)];
                    }
                    let inv3 = inv * inv * inv / cols as f64;
                    for j in 0..cols {
                        dx[(i, j)] = gv[(0, j)] * up[(i, j)] * inv - xv[(i, j)] * c * inv3;
                        dg[(0, j)] += up[(i, j)] * xv[(i, j)] * inv;
                    }
                }
                if self.requires_grad(*x) {
                    acc(*x, dx);
                }
                if self.requires_grad(*gain) {
                    acc(*gain, dg);
                }
            }
            Op::Reshape { x } => {
                let (rows, cols) = self.shape(*x);
                acc(*x, up.reshaped(rows, cols).expect("reshape backward shape"));
            }
        }
    }
}

/// `sqrt(mean(x²) + eps)` for one row.
fn row_rms(row: &[f64], eps: f64) -> f64 {
    let mean_sq = row.iter().map(|&v| v * v).sum::<f64>() / row.len() as f64;
    (mean_sq + eps).sqrt()
}

/// Numerically stable `ln Σ exp`.
fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Stable softmax of `row` written into `out`.
fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_for(tape: &Tape, loss: TensorId, id: TensorId) -> Tensor {
        tape.backward(loss).unwrap().take(id).expect("gradient present")
    }

    #[test]
    fn tanh_at_zero_is_zero_with_unit_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0), true);
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).item().unwrap(), 0.0);
        // d tanh/dx at 0 is exactly 1.
        let g = grad_for(&tape, y, x);
        assert_eq!(g.item().unwrap(), 1.0);
    }

    #[test]
    fn matmul_of_ones_counts_inner_dimension() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::filled(2, 3, 1.0));
        let b = tape.constant(Tensor::filled(3, 1, 1.0));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(1, 3));
        let loss = tape.softmax_cross_entropy(logits, &[Some(1)]).unwrap();
        let expected = 3.0_f64.ln();
        assert!((tape.value(loss).item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap(), true);
        let zero = tape.constant(Tensor::zeros(1, 2));
        let loss = tape.squared_error_sum(x, zero).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 5.0);
        let g = grad_for(&tape, loss, x);
        assert_eq!(g.data(), &[2.0, 4.0]);
    }

    #[test]
    fn concat_rows_backward_splits_exactly() {
        let mut tape = Tape::new();
        let top = tape.leaf(Tensor::filled(2, 2, 1.0), true);
        let bottom = tape.leaf(Tensor::filled(3, 2, 1.0), true);
        let joined = tape.concat_rows(top, bottom).unwrap();
        assert_eq!(tape.shape(joined), (5, 2));
        // Weight each output entry differently so the split is observable.
        let weights = Tensor::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        let target = tape.constant(weights.clone());
        let loss = tape.squared_error_sum(joined, target).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let g_top = grads.take(top).unwrap();
        let g_bottom = grads.take(bottom).unwrap();
        // d/da Σ(a - w)² = 2(a - w); the top gets rows 0..2, the bottom 2..5.
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g_top[(i, j)], 2.0 * (1.0 - weights[(i, j)]));
            }
        }
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(g_bottom[(i, j)], 2.0 * (1.0 - weights[(i + 2, j)]));
            }
        }
    }

    #[test]
    fn empty_prompt_concat_is_identity() {
        let mut tape = Tape::new();
        let prompt = tape.leaf(Tensor::zeros(0, 4), true);
        let tokens = tape.constant(Tensor::filled(3, 4, 0.5));
        let joined = tape.concat_rows(prompt, tokens).unwrap();
        assert_eq!(tape.shape(joined), (3, 4));
        assert_eq!(tape.value(joined).data(), Tensor::filled(3, 4, 0.5).data());
    }

    #[test]
    fn add_broadcasts_bias_row_and_sums_its_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(3, 2));
        let bias = tape.leaf(Tensor::from_vec(1, 2, vec![1.0, -1.0]).unwrap(), true);
        let y = tape.add(x, bias).unwrap();
        assert_eq!(tape.value(y).row(2), &[1.0, -1.0]);
        let target = tape.constant(Tensor::zeros(3, 2));
        let loss = tape.squared_error_sum(y, target).unwrap();
        let g = grad_for(&tape, loss, bias);
        // Each of the 3 rows contributes 2·(±1).
        assert_eq!(g.data(), &[6.0, -6.0]);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.constant(Tensor::zeros(1, 4));
        assert!(tape.add(a, c).is_err());
        assert!(tape.concat_rows(a, c).is_err());
        assert!(tape.softmax_cross_entropy(a, &[Some(0)]).is_err());
        assert!(tape.softmax_cross_entropy(a, &[None, None]).is_err());
        assert!(tape.row_softmax(a, true).is_err());
        assert!(tape.reshape(a, 4, 2).is_err());
    }

    #[test]
    fn causal_softmax_zeroes_the_upper_triangle() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(3, 3, 0.7));
        let y = tape.row_softmax(x, true).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.row(0), &[1.0, 0.0, 0.0]);
        for i in 0..3 {
            let row_sum: f64 = yv.row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            for j in (i + 1)..3 {
                assert_eq!(yv[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn frozen_inputs_get_no_gradient() {
        let mut tape = Tape::new();
        let frozen = tape.leaf(Tensor::filled(2, 2, 0.3), false);
        let live = tape.leaf(Tensor::filled(2, 2, 0.1), true);
        let y = tape.matmul(frozen, live).unwrap();
        let target = tape.constant(Tensor::zeros(2, 2));
        let loss = tape.squared_error_sum(y, target).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        assert!(grads.get(frozen).is_none());
        assert!(grads.take(live).is_some());
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let run = || {
            let mut rng = crate::rng::stream(42, "tape-determinism");
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::gaussian(&mut rng, 4, 5, 0.0, 1.0), true);
            let w = tape.leaf(Tensor::gaussian(&mut rng, 5, 3, 0.0, 1.0), true);
            let gain = tape.leaf(Tensor::filled(1, 5, 1.0), true);
            let normed = tape.rms_norm(x, gain, 1e-6).unwrap();
            let h = tape.matmul(normed, w).unwrap();
            let h = tape.tanh(h);
            let target = tape.constant(Tensor::gaussian(&mut rng, 4, 3, 0.0, 1.0));
            let loss = tape.squared_error_sum(h, target).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let mut bits: Vec<u64> = vec![tape.value(loss).item().unwrap().to_bits()];
            for id in [x, w, gain] {
                bits.extend(grads.take(id).unwrap().data().iter().map(|v| v.to_bits()));
            }
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn embedding_rows_accumulate_repeated_ids() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64), true);
        let gathered = tape.embedding_lookup(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(gathered).row(0), &[4.0, 5.0]);
        let target = tape.constant(Tensor::zeros(3, 2));
        let loss = tape.squared_error_sum(gathered, target).unwrap();
        let g = grad_for(&tape, loss, table);
        // Row 2 was used twice, row 1 never.
        assert_eq!(g.row(2), &[2.0 * 4.0 * 2.0, 2.0 * 5.0 * 2.0]);
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert!(tape.embedding_lookup(table, &[3]).is_err());
    }
}
