//! Central finite-difference sweeps over every differentiable operation.
//!
//! Each operation is exercised on 20 random shapes. Scalar heads are wrapped
//! in a non-unit `scale` so a missing upstream factor cannot pass; matrix
//! outputs are reduced through `squared_error_sum` against a random constant
//! so that every output entry receives a distinct upstream gradient.

use rand::Rng;
use subtune_core::autodiff::{GradCheck, Tape, Tensor, TensorId};
use subtune_core::rng::stream;

const TRIALS: usize = 20;

fn dim(rng: &mut impl Rng) -> usize {
    rng.gen_range(1..6)
}

/// Reduce a matrix node to a scalar with per-entry upstream weights.
fn reduce(tape: &mut Tape, y: TensorId, target: &Tensor) -> subtune_core::Result<TensorId> {
    let t = tape.constant(target.clone());
    let sq = tape.squared_error_sum(y, t)?;
    Ok(tape.scale(sq, 0.7))
}

#[test]
fn matmul_gradients() {
    let mut rng = stream(101, "gradcheck/matmul");
    for _ in 0..TRIALS {
        let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let a = Tensor::gaussian(&mut rng, m, k, 0.0, 1.0);
        let b = Tensor::gaussian(&mut rng, k, n, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[a, b], |tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn matmul_nt_gradients() {
    let mut rng = stream(102, "gradcheck/matmul_nt");
    for _ in 0..TRIALS {
        let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let a = Tensor::gaussian(&mut rng, m, k, 0.0, 1.0);
        let b = Tensor::gaussian(&mut rng, n, k, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[a, b], |tape, ids| {
            let y = tape.matmul_nt(ids[0], ids[1])?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn add_gradients_same_shape_and_broadcast() {
    let mut rng = stream(103, "gradcheck/add");
    for trial in 0..TRIALS {
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let a = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        let broadcast = trial % 2 == 0;
        let b_rows = if broadcast { 1 } else { m };
        let b = Tensor::gaussian(&mut rng, b_rows, n, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[a, b], |tape, ids| {
            let y = tape.add(ids[0], ids[1])?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn concat_rows_gradients_including_empty_sides() {
    let mut rng = stream(104, "gradcheck/concat_rows");
    for trial in 0..TRIALS {
        let n = dim(&mut rng);
        // Cycle through empty-top / empty-bottom / generic stackings.
        let top_rows = if trial % 3 == 0 { 0 } else { dim(&mut rng) };
        let bottom_rows = if trial % 3 == 1 { 0 } else { dim(&mut rng) };
        if top_rows + bottom_rows == 0 {
            continue;
        }
        let top = Tensor::gaussian(&mut rng, top_rows, n, 0.0, 1.0);
        let bottom = Tensor::gaussian(&mut rng, bottom_rows, n, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, top_rows + bottom_rows, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[top, bottom], |tape, ids| {
            let y = tape.concat_rows(ids[0], ids[1])?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn tanh_gradients() {
    let mut rng = stream(105, "gradcheck/tanh");
    for _ in 0..TRIALS {
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let x = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[x], |tape, ids| {
            let y = tape.tanh(ids[0]);
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn embedding_lookup_gradients_with_repeated_ids() {
    let mut rng = stream(106, "gradcheck/embedding_lookup");
    for _ in 0..TRIALS {
        let vocab = dim(&mut rng) + 1;
        let d = dim(&mut rng);
        let len = dim(&mut rng) + 2; // longer than vocab on average, forcing repeats
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let table = Tensor::gaussian(&mut rng, vocab, d, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, len, d, 0.0, 1.0);
        GradCheck::default().assert_matches(&[table], |tape, tids| {
            let y = tape.embedding_lookup(tids[0], &ids)?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn softmax_cross_entropy_gradients_with_skipped_rows() {
    let mut rng = stream(107, "gradcheck/softmax_cross_entropy");
    for _ in 0..TRIALS {
        let rows = dim(&mut rng);
        let classes = dim(&mut rng) + 1;
        let mut targets: Vec<Option<usize>> = (0..rows)
            .map(|_| if rng.gen_bool(0.3) { None } else { Some(rng.gen_range(0..classes)) })
            .collect();
        if targets.iter().all(Option::is_none) {
            targets[0] = Some(0);
        }
        let logits = Tensor::gaussian(&mut rng, rows, classes, 0.0, 1.5);
        GradCheck::default().assert_matches(&[logits], |tape, ids| {
            let loss = tape.softmax_cross_entropy(ids[0], &targets)?;
            Ok(tape.scale(loss, 1.3))
        });
    }
}

#[test]
fn squared_error_sum_gradients() {
    let mut rng = stream(108, "gradcheck/squared_error_sum");
    for _ in 0..TRIALS {
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let a = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        let b = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[a, b], |tape, ids| {
            let loss = tape.squared_error_sum(ids[0], ids[1])?;
            Ok(tape.scale(loss, 1.3))
        });
    }
}

#[test]
fn scale_gradients() {
    let mut rng = stream(109, "gradcheck/scale");
    for _ in 0..TRIALS {
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let factor = rng.gen_range(-2.0..2.0);
        let x = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[x], |tape, ids| {
            let y = tape.scale(ids[0], factor);
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn row_softmax_gradients_plain_and_causal() {
    let mut rng = stream(110, "gradcheck/row_softmax");
    for trial in 0..TRIALS {
        let causal = trial % 2 == 0;
        let m = dim(&mut rng);
        let n = if causal { m } else { dim(&mut rng) };
        let x = Tensor::gaussian(&mut rng, m, n, 0.0, 1.5);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[x], |tape, ids| {
            let y = tape.row_softmax(ids[0], causal)?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn rms_norm_gradients_for_input_and_gain() {
    let mut rng = stream(111, "gradcheck/rms_norm");
    for _ in 0..TRIALS {
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let x = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        let gain = Tensor::gaussian(&mut rng, 1, n, 1.0, 0.2);
        let target = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        GradCheck::default().assert_matches(&[x, gain], |tape, ids| {
            let y = tape.rms_norm(ids[0], ids[1], 1e-6)?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn reshape_gradients() {
    let mut rng = stream(112, "gradcheck/reshape");
    for _ in 0..TRIALS {
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let x = Tensor::gaussian(&mut rng, m, n, 0.0, 1.0);
        let target = Tensor::gaussian(&mut rng, m * n, 1, 0.0, 1.0);
        GradCheck::default().assert_matches(&[x], |tape, ids| {
            let y = tape.reshape(ids[0], m * n, 1)?;
            reduce(tape, y, &target)
        });
    }
}

#[test]
fn composed_network_gradients() {
    // A small MLP (shared-table embedding, rms-norm, two linear layers with a
    // tanh between, cross-entropy head) checks that chained vector–Jacobian
    // products compose correctly.
    let mut rng = stream(113, "gradcheck/composite");
    for _ in 0..8 {
        let vocab = 5;
        let d = 4;
        let len = 3;
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let targets: Vec<Option<usize>> = (0..len).map(|_| Some(rng.gen_range(0..vocab))).collect();
        let table = Tensor::gaussian(&mut rng, vocab, d, 0.0, 0.5);
        let gain = Tensor::gaussian(&mut rng, 1, d, 1.0, 0.1);
        let w1 = Tensor::gaussian(&mut rng, d, d, 0.0, 0.5);
        let b1 = Tensor::gaussian(&mut rng, 1, d, 0.0, 0.5);
        let w2 = Tensor::gaussian(&mut rng, d, vocab, 0.0, 0.5);
        GradCheck::default().assert_matches(&[table, gain, w1, b1, w2], |tape, p| {
            let x = tape.embedding_lookup(p[0], &ids)?;
            let x = tape.rms_norm(x, p[1], 1e-6)?;
            let x = tape.matmul(x, p[2])?;
            let x = tape.add(x, p[3])?;
            let x = tape.tanh(x);
            let logits = tape.matmul(x, p[4])?;
            let loss = tape.softmax_cross_entropy(logits, &targets)?;
            Ok(tape.scale(loss, 1.1))
        });
    }
}

#[test]
fn the_packaged_sweep_covers_every_op_and_passes() {
    let report = subtune_core::autodiff::verify_all_ops(20, 31).expect("sweep should pass");
    let names: Vec<&str> = report.iter().map(|e| e.op).collect();
    assert_eq!(
        names,
        [
            "matmul",
            "matmul_nt",
            "add",
            "concat_rows",
            "tanh",
            "embedding_lookup",
            "softmax_cross_entropy",
            "squared_error_sum",
            "scale",
            "row_softmax",
            "rms_norm",
            "reshape"
        ]
    );
    for entry in &report {
        assert!(entry.max_rel_error <= 1e-4, "{}: {:e}", entry.op, entry.max_rel_error);
    }
}
