//! Behavior of the shared training loop and the hyperparameter grid:
//! method equivalence, checkpoint selection, curve shape, determinism, and
//! failure reporting.

use std::sync::OnceLock;

use subtune_core::autodiff::{GradCheck, Tensor};
use subtune_core::error::Error;
use subtune_core::model::{pretrain_copy, ModelConfig, ModelParams, PretrainConfig, Vocab};
use subtune_core::optim::AdamWConfig;
use subtune_core::prompt::{
    decode_and_score, grid_search, prompt_init, train, GridConfig, GridJob, TrainConfig, TrainJob,
    TrainTarget, TunedParams,
};
use subtune_core::rng::stream;
use subtune_core::subspace::{AutoencoderParams, BackProjection, Subspace};
use subtune_core::tasks::{
    few_shot_split, generate_family, Example, FewShotSplit, Metric, SynthFamilyConfig, Task,
    TaskHeader,
};

const PROMPT_ROWS: usize = 4;
const D_MODEL: usize = 32;

struct Fixture {
    model: ModelParams,
    vocab: Vocab,
    task: Task,
    split: FewShotSplit,
}

/// One warmed backbone and one planted task, shared by every test here.
fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let vocab = Vocab::from_text("abcdefghij");
        let config = ModelConfig {
            d_model: D_MODEL,
            n_heads: 2,
            ff_mult: 2,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size: vocab.size(),
            max_len: 24,
        };
        let mut model = ModelParams::init(&config, &mut stream(21, "driver-test-init")).unwrap();
        let cfg = PretrainConfig { steps: 700, batch_size: 8, lr: 3e-3, min_len: 3, max_len: 7 };
        let report = pretrain_copy(&mut model, &vocab, &cfg, 21).unwrap();
        assert!(report.final_loss < 0.2, "warm-up failed: {}", report.final_loss);

        let fam_cfg = SynthFamilyConfig {
            train_tasks: 1,
            heldout_tasks: 0,
            subspace_dim: 2,
            prompt_rows: PROMPT_ROWS,
            examples_per_task: 24,
            test_size: 8,
            input_len_min: 3,
            input_len_max: 6,
            max_new_tokens: 10,
            base_scale: 0.1,
            latent_scale: 6.0,
            latent_min_separation: 1.0,
            off_subspace_noise: 0.0,
            few_shot_k: Some(8),
        };
        let out = generate_family(&model, &vocab, &fam_cfg, 31).unwrap();
        let task = out.train_tasks.into_iter().next().unwrap();
        let split = few_shot_split(&task, 4, 8, 31).unwrap();
        Fixture { model, vocab, task, split }
    })
}

fn quick_config(max_steps: usize, eval_every: usize) -> TrainConfig {
    TrainConfig {
        max_steps,
        eval_every,
        batch_size: 4,
        optimizer: AdamWConfig::with_lr(1e-2),
        max_new_tokens: 12,
    }
}

fn assert_bits_eq(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "{what}: entry {i} differs: {x} vs {y}");
    }
}

#[test]
fn identity_subspace_coordinate_tuning_is_bitwise_prompt_tuning() {
    let fx = fixture();
    let mut config = quick_config(30, 10);
    // Nonzero weight decay so the decoupled-decay path is part of the claim.
    config.optimizer.weight_decay = 0.01;
    let p0 = prompt_init(99, PROMPT_ROWS, D_MODEL, 0.02);

    let pt = train(&TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Prompt { init: p0.clone() },
        config: &config,
        seed: 1234,
    })
    .unwrap();

    let space = Subspace::identity(PROMPT_ROWS, D_MODEL).unwrap();
    let theta0 = p0.reshaped(PROMPT_ROWS * D_MODEL, 1).unwrap();
    let ist = train(&TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Subspace { space: &space, init: theta0 },
        config: &config,
        seed: 1234,
    })
    .unwrap();

    assert_eq!(pt.curve.len(), ist.curve.len());
    for (a, b) in pt.curve.iter().zip(&ist.curve) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.dev_score.to_bits(), b.dev_score.to_bits());
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
    assert_eq!(pt.best_step, ist.best_step);
    assert_eq!(pt.test_score.to_bits(), ist.test_score.to_bits());

    let p_pt = pt.tuned.prompt().expect("prompt target returns a prompt");
    let theta = ist.tuned.coordinates().expect("subspace target returns coordinates");
    let p_ist = space.back_project(theta).unwrap();
    assert_bits_eq(p_pt.data(), p_ist.data(), "final prompt");
}

#[test]
fn prompt_tuning_recovers_a_planted_task() {
    let fx = fixture();
    let config = quick_config(240, 40);
    let outcome = train(&TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Prompt { init: prompt_init(7, PROMPT_ROWS, D_MODEL, 0.02) },
        config: &config,
        seed: 7,
    })
    .unwrap();
    assert!(
        outcome.best_dev_score > outcome.init_dev_score,
        "training never beat the initialization: init {} best {}",
        outcome.init_dev_score,
        outcome.best_dev_score
    );
    assert!(
        outcome.test_score > 0.2,
        "tuned prompt scores only {} on the planted task's test block",
        outcome.test_score
    );
    let loss = outcome.final_train_loss.unwrap();
    assert!(loss.is_finite() && loss < 1.0, "train loss should have dropped, got {loss}");
}

#[test]
fn runs_are_deterministic_in_the_seed() {
    let fx = fixture();
    let config = quick_config(20, 10);
    let job = || TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Prompt { init: prompt_init(3, PROMPT_ROWS, D_MODEL, 0.02) },
        config: &config,
        seed: 77,
    };
    let a = train(&job()).unwrap();
    let b = train(&job()).unwrap();
    assert_bits_eq(
        a.tuned.prompt().unwrap().data(),
        b.tuned.prompt().unwrap().data(),
        "tuned prompt",
    );
    assert_eq!(a.best_step, b.best_step);
    assert_eq!(a.test_score.to_bits(), b.test_score.to_bits());
}

#[test]
fn curve_has_exactly_max_steps_over_eval_every_points() {
    let fx = fixture();
    for (max_steps, eval_every, expected) in [(12, 4, vec![4, 8, 12]), (12, 6, vec![6, 12])] {
        let config = quick_config(max_steps, eval_every);
        let outcome = train(&TrainJob {
            model: &fx.model,
            vocab: &fx.vocab,
            task: &fx.task,
            split: &fx.split,
            target: TrainTarget::Prompt { init: prompt_init(4, PROMPT_ROWS, D_MODEL, 0.02) },
            config: &config,
            seed: 4,
        })
        .unwrap();
        let steps: Vec<usize> = outcome.curve.iter().map(|p| p.step).collect();
        assert_eq!(steps, expected);
    }
    // The cadence must tile the step budget exactly; a remainder would leave
    // untracked training after the last snapshot candidate.
    let bad = quick_config(12, 5);
    assert!(matches!(
        train(&TrainJob {
            model: &fx.model,
            vocab: &fx.vocab,
            task: &fx.task,
            split: &fx.split,
            target: TrainTarget::Prompt { init: prompt_init(4, PROMPT_ROWS, D_MODEL, 0.02) },
            config: &bad,
            seed: 4,
        }),
        Err(Error::Config { .. })
    ));
}

#[test]
fn zero_step_run_returns_the_initialization_untouched() {
    let fx = fixture();
    let config = quick_config(0, 10);
    let p0 = prompt_init(5, PROMPT_ROWS, D_MODEL, 0.02);
    let outcome = train(&TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Prompt { init: p0.clone() },
        config: &config,
        seed: 5,
    })
    .unwrap();
    assert!(outcome.curve.is_empty());
    assert_eq!(outcome.best_step, 0);
    assert!(outcome.final_train_loss.is_none());
    assert_bits_eq(outcome.tuned.prompt().unwrap().data(), p0.data(), "untrained prompt");
    let direct = decode_and_score(
        &fx.model,
        &fx.vocab,
        Some(&p0),
        &fx.split.test,
        fx.task.header.metric,
        config.max_new_tokens,
    )
    .unwrap();
    assert_eq!(outcome.test_score.to_bits(), direct.to_bits());
}

#[test]
fn fine_tuning_memorizes_train_and_selection_stays_honest() {
    let fx = fixture();
    let config = TrainConfig {
        max_steps: 60,
        eval_every: 20,
        batch_size: 4,
        optimizer: AdamWConfig::with_lr(1e-3),
        max_new_tokens: 12,
    };
    let job = || TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Model,
        config: &config,
        seed: 13,
    };
    let a = train(&job()).unwrap();
    let b = train(&job()).unwrap();
    let (ma, mb) = match (&a.tuned, &b.tuned) {
        (TunedParams::Model(ma), TunedParams::Model(mb)) => (ma, mb),
        _ => panic!("fine-tuning must return model parameters"),
    };
    assert_eq!(ma.checksum(), mb.checksum(), "fine-tuning must be deterministic");
    // Full fine-tuning memorizes the few-shot train split almost immediately…
    let loss = a.final_train_loss.unwrap();
    assert!(loss < 0.05, "expected train-loss collapse, got {loss}");
    // …and selection must stay honest about what that bought on dev: when no
    // step beat the initialization, the returned model is the backbone,
    // untouched; when one did, it must differ.
    assert!(a.best_dev_score >= a.init_dev_score);
    if a.best_step == 0 {
        assert_eq!(ma.checksum(), fx.model.checksum(), "init snapshot must be the backbone itself");
    } else {
        assert_ne!(ma.checksum(), fx.model.checksum(), "selected weights must differ from the backbone");
    }
}

#[test]
fn grid_breaks_dev_ties_toward_smaller_lr_then_smaller_batch() {
    let fx = fixture();
    // Zero steps: every cell scores the same initialization, forcing a tie.
    let base = quick_config(0, 10);
    let grid = GridConfig { lrs: vec![3e-3, 1e-3], batch_sizes: vec![8, 4] };
    let out = grid_search(&GridJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &fx.task,
        split: &fx.split,
        target: TrainTarget::Prompt { init: prompt_init(6, PROMPT_ROWS, D_MODEL, 0.02) },
        base: &base,
        grid: &grid,
        seed: 6,
    })
    .unwrap();
    assert_eq!(out.lr, 1e-3);
    assert_eq!(out.batch_size, 4);
    assert_eq!(out.cells.len(), 4);
    assert!(out.cells.iter().all(|c| c.error.is_none()));
    let scores: Vec<f64> = out.cells.iter().map(|c| c.best_dev_score.unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] == w[1]), "cells should tie at zero steps: {scores:?}");
}

#[test]
fn grid_reports_total_failure_when_every_cell_fails() {
    let fx = fixture();
    // 'z' is not in the fixture vocabulary, so tokenization fails in every cell.
    let task = Task {
        header: TaskHeader {
            name: "oov".into(),
            category: "other".into(),
            ontology: "other/other".into(),
            metric: Metric::ExactMatch,
            k: Some(2),
        },
        examples: (0..4)
            .map(|i| Example { input: format!("z{i:02}"), target: "a".into() })
            .collect(),
    };
    let split = few_shot_split(&task, 1, 1, 0).unwrap();
    let base = quick_config(4, 2);
    let grid = GridConfig { lrs: vec![1e-2, 1e-3], batch_sizes: vec![2] };
    let err = grid_search(&GridJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task: &task,
        split: &split,
        target: TrainTarget::Prompt { init: prompt_init(8, PROMPT_ROWS, D_MODEL, 0.02) },
        base: &base,
        grid: &grid,
        seed: 8,
    })
    .unwrap_err();
    match err {
        Error::GridFailure(msg) => {
            assert!(msg.contains("lr=0.01") && msg.contains("lr=0.001"), "message lists cells: {msg}");
        }
        other => panic!("expected GridFailure, got {other:?}"),
    }
}

#[test]
fn random_subspace_projection_inverts_back_projection() {
    let mut rng = stream(17, "subspace-roundtrip");
    let anchor = Tensor::gaussian(&mut rng, PROMPT_ROWS, D_MODEL, 0.0, 0.02);
    let space = Subspace::random(&mut rng, PROMPT_ROWS, D_MODEL, 5, &anchor).unwrap();
    let theta = Tensor::gaussian(&mut rng, 5, 1, 0.0, 1.0);
    let prompt = space.back_project(&theta).unwrap();
    let back = space.project(&prompt).unwrap();
    for (a, b) in theta.data().iter().zip(back.data()) {
        assert!((a - b).abs() < 1e-10, "round trip drifted: {a} vs {b}");
    }
    // The anchor itself maps to the origin of the coordinate system.
    let zero = space.project(&anchor).unwrap();
    assert!(zero.data().iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn autoencoder_back_projection_gradients_match_central_differences() {
    let mut rng = stream(19, "subspace-gradcheck");
    let ae = AutoencoderParams::init(&mut rng, PROMPT_ROWS * 6, 3, 5, None).unwrap();
    let space = Subspace::new(PROMPT_ROWS, 6, 3, BackProjection::Mlp(ae)).unwrap();
    let theta = Tensor::gaussian(&mut rng, 3, 1, 0.0, 1.0);
    let reference = Tensor::gaussian(&mut rng, PROMPT_ROWS, 6, 0.0, 0.5);
    GradCheck::default().assert_matches(&[theta], |tape, ids| {
        let prompt = space.back_project_on_tape(tape, ids[0])?;
        let target = tape.constant(reference.clone());
        let loss = tape.squared_error_sum(prompt, target)?;
        Ok(tape.scale(loss, 0.7))
    });
}

#[test]
fn tape_and_concrete_back_projections_agree() {
    let mut rng = stream(23, "subspace-agreement");
    let ae = AutoencoderParams::init(&mut rng, PROMPT_ROWS * D_MODEL, 4, 6, None).unwrap();
    let space = Subspace::new(PROMPT_ROWS, D_MODEL, 4, BackProjection::Mlp(ae)).unwrap();
    let theta = Tensor::gaussian(&mut rng, 4, 1, 0.0, 1.0);
    let concrete = space.back_project(&theta).unwrap();
    let mut tape = subtune_core::Tape::new();
    let theta_id = tape.leaf(theta, false);
    let on_tape = space.back_project_on_tape(&mut tape, theta_id).unwrap();
    assert_bits_eq(concrete.data(), tape.value(on_tape).data(), "back-projected prompt");
}
