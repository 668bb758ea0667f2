//! Behavior of multi-task subspace finding and coordinate tuning: planted
//! recovery, objective decomposition, snapshot selection, and the two-stage
//! warm start.

use std::sync::OnceLock;

use subtune_core::model::{pretrain_copy, ModelConfig, ModelParams, PretrainConfig, Vocab};
use subtune_core::optim::AdamWConfig;
use subtune_core::prompt::TrainConfig;
use subtune_core::rng::stream;
use subtune_core::subspace::{
    msf_train, MsfConfig, MsfSelection, MsfTaskEntry, Subspace,
};
use subtune_core::tasks::{few_shot_split, generate_family, FewShotSplit, SynthFamilyConfig, Task};
use subtune_core::Tensor;

const PROMPT_ROWS: usize = 4;
const D_MODEL: usize = 32;
const PLANTED_DIM: usize = 3;

struct Fixture {
    model: ModelParams,
    vocab: Vocab,
    tasks: Vec<Task>,
    splits: Vec<FewShotSplit>,
    teacher_prompts: Vec<Tensor>,
}

/// A warmed backbone plus a 12-task family planted in a 3-dim subspace.
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
        let mut model = ModelParams::init(&config, &mut stream(41, "msf-test-init")).unwrap();
        let cfg = PretrainConfig { steps: 700, batch_size: 8, lr: 3e-3, min_len: 3, max_len: 7 };
        let report = pretrain_copy(&mut model, &vocab, &cfg, 41).unwrap();
        assert!(report.final_loss < 0.2, "warm-up failed: {}", report.final_loss);

        let fam_cfg = SynthFamilyConfig {
            train_tasks: 12,
            heldout_tasks: 0,
            subspace_dim: PLANTED_DIM,
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
        let out = generate_family(&model, &vocab, &fam_cfg, 51).unwrap();
        let splits =
            out.train_tasks.iter().map(|t| few_shot_split(t, 4, 8, 51).unwrap()).collect();
        Fixture {
            model,
            vocab,
            tasks: out.train_tasks,
            splits,
            teacher_prompts: out.family.train_prompts.clone(),
        }
    })
}

fn entries(fx: &Fixture) -> Vec<MsfTaskEntry<'_>> {
    fx.tasks
        .iter()
        .zip(&fx.splits)
        .zip(&fx.teacher_prompts)
        .map(|((task, split), prompt)| MsfTaskEntry { task, split, prompt: prompt.clone() })
        .collect()
}

/// Mean squared distance of bank prompts from their centroid: the residual a
/// zero-dimensional (constant) reconstruction would get.
fn bank_variance(bank: &[Tensor]) -> f64 {
    let centroid = subtune_core::subspace::bank_centroid(bank).unwrap();
    let n = bank[0].len();
    bank.iter()
        .map(|p| p.reshaped(n, 1).unwrap().sub(&centroid).frob_sq())
        .sum::<f64>()
        / bank.len() as f64
}

fn pure_reconstruction_config(latent_dim: usize) -> MsfConfig {
    MsfConfig {
        latent_dim,
        hidden_dim: 16,
        alpha: 1.0,
        lm_weight: 0.0,
        max_steps: 4000,
        eval_every: 1000,
        task_batch: 4,
        example_batch: 1,
        optimizer: AdamWConfig::with_lr(3e-3),
        max_new_tokens: 10,
        selection: MsfSelection::Final,
    }
}

#[test]
fn subspace_finder_recovers_a_planted_bank_at_the_planted_dimension() {
    let fx = fixture();
    let bank = entries(fx);
    let variance = bank_variance(&fx.teacher_prompts);
    assert!(variance > 1.0, "planted bank is degenerate: variance {variance}");

    let exact = msf_train(
        &fx.model,
        &fx.vocab,
        &bank,
        &pure_reconstruction_config(PLANTED_DIM),
        61,
    )
    .unwrap();
    let starved = msf_train(
        &fx.model,
        &fx.vocab,
        &bank,
        &pure_reconstruction_config(PLANTED_DIM - 2),
        61,
    )
    .unwrap();

    assert!(
        exact.reconstruction_error < 0.01 * variance,
        "at the planted dimension the bank should be almost perfectly explained: \
         residual {} vs variance {variance}",
        exact.reconstruction_error
    );
    assert!(
        starved.reconstruction_error > 10.0 * exact.reconstruction_error,
        "two dimensions short, reconstruction must be much worse: {} vs {}",
        starved.reconstruction_error,
        exact.reconstruction_error
    );
}

#[test]
fn joint_objective_decomposes_into_lm_and_reconstruction_terms() {
    let fx = fixture();
    let bank = entries(fx);
    let one_step = |alpha: f64, lm_weight: f64| -> f64 {
        let config = MsfConfig {
            latent_dim: PLANTED_DIM,
            hidden_dim: 16,
            alpha,
            lm_weight,
            max_steps: 1,
            eval_every: 1,
            task_batch: 3,
            example_batch: 2,
            optimizer: AdamWConfig::with_lr(1e-3),
            max_new_tokens: 10,
            selection: MsfSelection::Final,
        };
        let out = msf_train(&fx.model, &fx.vocab, &bank, &config, 71).unwrap();
        out.curve[0].objective
    };
    let joint = one_step(0.5, 1.0);
    let lm_only = one_step(0.0, 1.0);
    let ae_only = one_step(1.0, 0.0);
    let recomposed = lm_only + 0.5 * ae_only;
    assert!(
        (joint - recomposed).abs() < 1e-9,
        "joint {joint} vs lm {lm_only} + 0.5 * ae {ae_only} = {recomposed}"
    );
}

#[test]
fn dev_selection_returns_the_best_snapshot_and_is_deterministic() {
    let fx = fixture();
    let config = MsfConfig {
        latent_dim: PLANTED_DIM,
        hidden_dim: 16,
        alpha: 1.0,
        lm_weight: 1.0,
        max_steps: 60,
        eval_every: 20,
        task_batch: 3,
        example_batch: 2,
        optimizer: AdamWConfig::with_lr(3e-3),
        max_new_tokens: 10,
        selection: MsfSelection::DevScore,
    };
    let bank = entries(fx);
    let a = msf_train(&fx.model, &fx.vocab, &bank, &config, 81).unwrap();
    let b = msf_train(&fx.model, &fx.vocab, &bank, &config, 81).unwrap();

    assert_eq!(a.curve.len(), 3);
    let best = a.best_dev_score.expect("dev selection reports a score");
    for point in &a.curve {
        let dev = point.dev_score.expect("dev selection evaluates every point");
        assert!(best >= dev, "selected snapshot must dominate the curve");
        if point.step == a.best_step {
            assert_eq!(dev.to_bits(), best.to_bits());
        }
    }
    assert!(a.reconstruction_error.is_finite());

    assert_eq!(a.best_step, b.best_step);
    assert_eq!(a.curve, b.curve);
    match (&a.subspace.map, &b.subspace.map) {
        (
            subtune_core::subspace::BackProjection::Mlp(x),
            subtune_core::subspace::BackProjection::Mlp(y),
        ) => {
            for ((_, s), (_, t)) in x.named_tensors().into_iter().zip(y.named_tensors()) {
                assert_eq!(s.data(), t.data(), "reruns must be bitwise identical");
            }
        }
        _ => panic!("subspace finding returns the autoencoder variant"),
    }
}

#[test]
fn warm_started_prompt_tuning_hands_over_the_exact_back_projection() {
    let fx = fixture();
    let task = &fx.tasks[0];
    let split = &fx.splits[0];
    let anchor = Tensor::zeros(PROMPT_ROWS, D_MODEL);
    let space =
        Subspace::random(&mut stream(91, "ipt-space"), PROMPT_ROWS, D_MODEL, 3, &anchor).unwrap();
    let ist_config = TrainConfig {
        max_steps: 20,
        eval_every: 10,
        batch_size: 4,
        optimizer: AdamWConfig::with_lr(3e-2),
        max_new_tokens: 12,
    };
    // Zero-step second stage: its "tuned" prompt must be exactly stage 1's
    // back-projected coordinates.
    let pt_config = TrainConfig { max_steps: 0, ..ist_config.clone() };
    let out = subtune_core::ist::ipt_train(
        &fx.model,
        &fx.vocab,
        task,
        split,
        &space,
        &subtune_core::ist::ThetaInit::Zeros,
        &ist_config,
        &pt_config,
        91,
    )
    .unwrap();
    let theta = out.ist.tuned.coordinates().unwrap();
    assert_eq!(theta.shape(), (3, 1));
    let expected = space.back_project(theta).unwrap();
    let handed = out.pt.tuned.prompt().unwrap();
    for (a, b) in expected.data().iter().zip(handed.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // Stage 1 really starts at the anchor: zero coordinates back-project to it.
    let origin = space.back_project(&Tensor::zeros(3, 1)).unwrap();
    for (a, b) in origin.data().iter().zip(anchor.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn bank_shape_mismatches_are_rejected() {
    let fx = fixture();
    let mut bank = entries(fx);
    bank[1].prompt = Tensor::zeros(PROMPT_ROWS + 1, D_MODEL);
    let err = msf_train(&fx.model, &fx.vocab, &bank, &pure_reconstruction_config(2), 3)
        .unwrap_err();
    assert!(matches!(err, subtune_core::Error::Dimension { .. }), "got {err:?}");
    let empty: Vec<MsfTaskEntry> = Vec::new();
    let err =
        msf_train(&fx.model, &fx.vocab, &empty, &pure_reconstruction_config(2), 3).unwrap_err();
    assert!(matches!(err, subtune_core::Error::Usage(_)), "got {err:?}");
}

#[test]
fn coordinate_training_sees_the_same_losses_as_prompt_training_at_the_same_point() {
    // One step from θ* inside the space and one step from its back-projected
    // prompt must score the same first batch bit for bit: the batch stream
    // depends only on (seed, task), and the on-tape back-projection must
    // match the eager one exactly.
    let fx = fixture();
    let task = &fx.tasks[1];
    let split = &fx.splits[1];
    let anchor = Tensor::zeros(PROMPT_ROWS, D_MODEL);
    let space =
        Subspace::random(&mut stream(92, "wiring-space"), PROMPT_ROWS, D_MODEL, 3, &anchor)
            .unwrap();
    let theta_star = Tensor::gaussian(&mut stream(92, "wiring-theta"), 3, 1, 0.0, 0.5);
    let prompt_star = space.back_project(&theta_star).unwrap();

    let config = TrainConfig {
        max_steps: 1,
        eval_every: 1,
        batch_size: 4,
        optimizer: AdamWConfig::with_lr(1e-3),
        max_new_tokens: 12,
    };
    let seed = 92;
    let as_coordinates = subtune_core::ist::ist_train(
        &fx.model,
        &fx.vocab,
        task,
        split,
        &space,
        &subtune_core::ist::ThetaInit::Given(theta_star.clone()),
        &config,
        seed,
    )
    .unwrap();
    let as_prompt = subtune_core::prompt::train(&subtune_core::prompt::TrainJob {
        model: &fx.model,
        vocab: &fx.vocab,
        task,
        split,
        target: subtune_core::prompt::TrainTarget::Prompt { init: prompt_star },
        config: &config,
        seed,
    })
    .unwrap();

    // Projecting the back-projected point recovers the coordinates to
    // rounding for orthonormal columns, so a prompt-derived warm start
    // lands where the explicit coordinates do.
    let recovered = space.project(&space.back_project(&theta_star).unwrap()).unwrap();
    for (a, b) in recovered.data().iter().zip(theta_star.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let coord_loss = as_coordinates.final_train_loss.unwrap();
    let prompt_loss = as_prompt.final_train_loss.unwrap();
    assert_eq!(coord_loss.to_bits(), prompt_loss.to_bits());
    assert_eq!(
        as_coordinates.init_dev_score.to_bits(),
        as_prompt.init_dev_score.to_bits()
    );
}
