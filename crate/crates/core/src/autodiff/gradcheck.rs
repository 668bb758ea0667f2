//! Finite-difference verification of tape gradients.
//!
//! Central differences with a small step give an oracle that is independent
//! of the backward implementation: for each entry of each differentiable
//! input we rebuild the forward pass twice and compare `(f(x+h) - f(x-h)) /
//! 2h` against the analytic gradient. Used by the per-operation test sweeps
//! and by whole-model gradient tests.

use crate::autodiff::tape::{Tape, TensorId};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

pub struct GradCheck {
    /// Perturbation step for central differences.
    pub step: f64,
    /// Maximum accepted relative error.
    pub rel_tol: f64,
    /// Entries where both analytic and numeric magnitude fall below this
    /// floor are treated as zero and skipped.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-4, rel_tol: 1e-4, floor: 1e-8 }
    }
}

impl GradCheck {
    /// Check the gradient of the scalar produced by `build` with respect to
    /// every entry of every tensor in `inputs`. `build` must be a pure
    /// function of the leaf values. Panics with a diagnostic on mismatch.
    pub fn assert_matches<F>(&self, inputs: &[Tensor], build: F)
    where
        F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
    {
        let (worst, detail) = self.worst_entry(inputs, &build);
        assert!(worst <= self.rel_tol, "gradient mismatch: {detail}");
    }

    /// The largest relative error over all entries of all inputs, with a
    /// description of the worst entry. Entries below the zero floor are
    /// skipped.
    pub fn max_rel_error<F>(&self, inputs: &[Tensor], build: F) -> f64
    where
        F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
    {
        self.worst_entry(inputs, &build).0
    }

    fn worst_entry<F>(&self, inputs: &[Tensor], build: &F) -> (f64, String)
    where
        F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
    {
        let loss_of = |values: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<TensorId> = values.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let out = build(&mut tape, &ids).expect("forward build failed");
            tape.value(out).item().expect("loss must be a 1x1 scalar")
        };

        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &ids).expect("forward build failed");
        let grads = tape.backward(out).expect("backward failed");

        let mut worst = 0.0;
        let mut detail = String::from("all entries within the zero floor");
        for (k, input) in inputs.iter().enumerate() {
            let zero = Tensor::zeros(input.rows(), input.cols());
            let analytic = grads.get(ids[k]).unwrap_or(&zero);
            for e in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[e] += self.step;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[e] -= self.step;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * self.step);
                let a = analytic.data()[e];
                let denom = a.abs().max(numeric.abs());
                if denom <= self.floor {
                    continue;
                }
                let rel = (a - numeric).abs() / denom;
                if rel > worst {
                    worst = rel;
                    detail = format!(
                        "input {k} entry {e}: analytic {a:e} vs central-difference {numeric:e} (rel err {rel:e})"
                    );
                }
            }
        }
        (worst, detail)
    }
}

/// Outcome of one operation's randomized sweep.
#[derive(Debug, Clone)]
pub struct OpSweepEntry {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

/// Sweep every differentiable tape operation over `trials` random shapes
/// each and report the worst relative error per operation. Matrix-valued
/// outputs are reduced through a squared-error head with per-entry targets
/// so every output entry receives a distinct upstream gradient; scalar
/// heads are wrapped in a non-unit scale so a missing upstream factor
/// cannot pass. Returns an error naming the first operation whose worst
/// entry exceeds the tolerance.
pub fn verify_all_ops(trials: usize, seed: u64) -> crate::error::Result<Vec<OpSweepEntry>> {
    use crate::error::Error;
    use crate::rng::stream;
    use rand::Rng;

    if trials == 0 {
        return Err(Error::Usage("the sweep needs at least one trial".into()));
    }
    let check = GradCheck::default();
    let dim = |rng: &mut rand_chacha::ChaCha12Rng| rng.gen_range(1..6);
    let reduce = |tape: &mut Tape, y: TensorId, target: &Tensor| -> Result<TensorId> {
        let t = tape.constant(target.clone());
        let sq = tape.squared_error_sum(y, t)?;
        Ok(tape.scale(sq, 0.7))
    };

    let mut report = Vec::new();
    let mut run = |op: &'static str,
                   body: &mut dyn FnMut(&mut rand_chacha::ChaCha12Rng, &GradCheck) -> f64|
     -> crate::error::Result<()> {
        let mut rng = stream(seed, &format!("ops/{op}"));
        let mut worst = 0.0_f64;
        for _ in 0..trials {
            worst = worst.max(body(&mut rng, &check));
        }
        report.push(OpSweepEntry { op, trials, max_rel_error: worst });
        if worst > check.rel_tol {
            return Err(Error::numeric(
                format!("gradient sweep for {op}"),
                format!("worst relative error {worst:e} exceeds {:e}", check.rel_tol),
            ));
        }
        Ok(())
    };

    run("matmul", &mut |rng, check| {
        let (m, k, n) = (dim(rng), dim(rng), dim(rng));
        let a = Tensor::gaussian(rng, m, k, 0.0, 1.0);
        let b = Tensor::gaussian(rng, k, n, 0.0, 1.0);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[a, b], |tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            reduce(tape, y, &target)
        })
    })?;

    run("matmul_nt", &mut |rng, check| {
        let (m, k, n) = (dim(rng), dim(rng), dim(rng));
        let a = Tensor::gaussian(rng, m, k, 0.0, 1.0);
        let b = Tensor::gaussian(rng, n, k, 0.0, 1.0);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[a, b], |tape, ids| {
            let y = tape.matmul_nt(ids[0], ids[1])?;
            reduce(tape, y, &target)
        })
    })?;

    let mut add_trial = 0usize;
    run("add", &mut |rng, check| {
        let (m, n) = (dim(rng), dim(rng));
        let a = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        let b_rows = if add_trial % 2 == 0 { 1 } else { m };
        add_trial += 1;
        let b = Tensor::gaussian(rng, b_rows, n, 0.0, 1.0);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[a, b], |tape, ids| {
            let y = tape.add(ids[0], ids[1])?;
            reduce(tape, y, &target)
        })
    })?;

    let mut concat_trial = 0usize;
    run("concat_rows", &mut |rng, check| {
        let n = dim(rng);
        let top_rows = if concat_trial % 3 == 0 { 0 } else { dim(rng) };
        let bottom_rows = if concat_trial % 3 == 1 { 0 } else { dim(rng) };
        concat_trial += 1;
        if top_rows + bottom_rows == 0 {
            return 0.0;
        }
        let top = Tensor::gaussian(rng, top_rows, n, 0.0, 1.0);
        let bottom = Tensor::gaussian(rng, bottom_rows, n, 0.0, 1.0);
        let target = Tensor::gaussian(rng, top_rows + bottom_rows, n, 0.0, 1.0);
        check.max_rel_error(&[top, bottom], |tape, ids| {
            let y = tape.concat_rows(ids[0], ids[1])?;
            reduce(tape, y, &target)
        })
    })?;

    run("tanh", &mut |rng, check| {
        let (m, n) = (dim(rng), dim(rng));
        let x = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[x], |tape, ids| {
            let y = tape.tanh(ids[0]);
            reduce(tape, y, &target)
        })
    })?;

    run("embedding_lookup", &mut |rng, check| {
        let vocab = dim(rng) + 1;
        let d = dim(rng);
        let len = dim(rng) + 2;
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let table = Tensor::gaussian(rng, vocab, d, 0.0, 1.0);
        let target = Tensor::gaussian(rng, len, d, 0.0, 1.0);
        check.max_rel_error(&[table], |tape, tids| {
            let y = tape.embedding_lookup(tids[0], &ids)?;
            reduce(tape, y, &target)
        })
    })?;

    run("softmax_cross_entropy", &mut |rng, check| {
        let rows = dim(rng);
        let classes = dim(rng) + 1;
        let mut targets: Vec<Option<usize>> = (0..rows)
            .map(|_| if rng.gen_bool(0.3) { None } else { Some(rng.gen_range(0..classes)) })
            .collect();
        if targets.iter().all(Option::is_none) {
            targets[0] = Some(0);
        }
        let logits = Tensor::gaussian(rng, rows, classes, 0.0, 1.5);
        check.max_rel_error(&[logits], |tape, ids| {
            let loss = tape.softmax_cross_entropy(ids[0], &targets)?;
            Ok(tape.scale(loss, 1.3))
        })
    })?;

    run("squared_error_sum", &mut |rng, check| {
        let (m, n) = (dim(rng), dim(rng));
        let a = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        let b = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[a, b], |tape, ids| {
            let loss = tape.squared_error_sum(ids[0], ids[1])?;
            Ok(tape.scale(loss, 1.3))
        })
    })?;

    run("scale", &mut |rng, check| {
        let (m, n) = (dim(rng), dim(rng));
        let factor = rng.gen_range(-2.0..2.0);
        let x = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[x], |tape, ids| {
            let y = tape.scale(ids[0], factor);
            reduce(tape, y, &target)
        })
    })?;

    let mut softmax_trial = 0usize;
    run("row_softmax", &mut |rng, check| {
        let causal = softmax_trial % 2 == 0;
        softmax_trial += 1;
        let m = dim(rng);
        let n = if causal { m } else { dim(rng) };
        let x = Tensor::gaussian(rng, m, n, 0.0, 1.5);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[x], |tape, ids| {
            let y = tape.row_softmax(ids[0], causal)?;
            reduce(tape, y, &target)
        })
    })?;

    run("rms_norm", &mut |rng, check| {
        let (m, n) = (dim(rng), dim(rng));
        let x = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        let gain = Tensor::gaussian(rng, 1, n, 1.0, 0.2);
        let target = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        check.max_rel_error(&[x, gain], |tape, ids| {
            let y = tape.rms_norm(ids[0], ids[1], 1e-6)?;
            reduce(tape, y, &target)
        })
    })?;

    run("reshape", &mut |rng, check| {
        let (m, n) = (dim(rng), dim(rng));
        let x = Tensor::gaussian(rng, m, n, 0.0, 1.0);
        let target = Tensor::gaussian(rng, m * n, 1, 0.0, 1.0);
        check.max_rel_error(&[x], |tape, ids| {
            let y = tape.reshape(ids[0], m * n, 1)?;
            reduce(tape, y, &target)
        })
    })?;

    Ok(report)
}
