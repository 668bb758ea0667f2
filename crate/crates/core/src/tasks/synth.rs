//! Synthetic task families with a planted prompt subspace.
//!
//! Construction: take a backbone already warmed up on a copy corpus, draw a
//! base prompt `P₀` and an orthonormal basis `B₁..B_k` over flattened
//! prompts. Each task is a latent coefficient vector `z`; its teacher prompt
//! is `P₀ + Σ_j z_j·B_j` (plus optional off-subspace noise). Task inputs are
//! random character strings and targets are the backbone's own greedy decodes
//! under the teacher prompt, so every task is realizable by a soft prompt
//! *by construction* and the family's true subspace is known exactly.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::orthonormal_rows;
use crate::model::{greedy_decode, ModelParams, Vocab, NUM_SPECIALS};
use crate::rng::stream;
use crate::tasks::types::{category_of, Example, Metric, Task, TaskHeader, ONTOLOGY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFamilyConfig {
    pub train_tasks: usize,
    pub heldout_tasks: usize,
    /// Planted subspace dimension `k` (0 makes every teacher prompt equal).
    pub subspace_dim: usize,
    /// Soft-prompt rows `n`.
    pub prompt_rows: usize,
    /// Pool size per task, including the test block.
    pub examples_per_task: usize,
    pub test_size: usize,
    pub input_len_min: usize,
    pub input_len_max: usize,
    pub max_new_tokens: usize,
    /// Std of the base prompt entries.
    pub base_scale: f64,
    /// Std of the latent coefficients.
    pub latent_scale: f64,
    /// Minimum Euclidean distance between any two tasks' latents.
    pub latent_min_separation: f64,
    /// Std of an extra per-task perturbation outside the planted subspace.
    pub off_subspace_noise: f64,
    /// Few-shot budget written into every generated header.
    pub few_shot_k: Option<usize>,
}

impl Default for SynthFamilyConfig {
    fn default() -> Self {
        SynthFamilyConfig {
            train_tasks: 24,
            heldout_tasks: 8,
            subspace_dim: 3,
            prompt_rows: 16,
            examples_per_task: 112,
            test_size: 64,
            input_len_min: 4,
            input_len_max: 8,
            max_new_tokens: 12,
            base_scale: 0.1,
            latent_scale: 3.0,
            latent_min_separation: 1.0,
            off_subspace_noise: 0.0,
            few_shot_k: None,
        }
    }
}

impl SynthFamilyConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, detail: String| Error::Config { path: format!("synth.{path}"), detail };
        if self.train_tasks == 0 {
            return Err(field("train_tasks", "must be positive".into()));
        }
        if self.prompt_rows == 0 {
            return Err(field("prompt_rows", "must be positive".into()));
        }
        if self.test_size == 0 || self.examples_per_task <= self.test_size {
            return Err(field(
                "examples_per_task",
                format!("pool {} must exceed test block {}", self.examples_per_task, self.test_size),
            ));
        }
        if self.input_len_min == 0 || self.input_len_min > self.input_len_max {
            return Err(field("input_len_min", "need 1 <= min <= max".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(field("max_new_tokens", "must be positive".into()));
        }
        if self.few_shot_k == Some(0) {
            return Err(field("few_shot_k", "must be positive when set".into()));
        }
        Ok(())
    }
}

/// Ground truth about a generated family.
#[derive(Debug, Clone)]
pub struct PlantedFamily {
    pub base: Tensor,
    /// `k` orthonormal (in the flattened sense) `n×d` directions.
    pub basis: Vec<Tensor>,
    pub train_latents: Vec<Vec<f64>>,
    pub heldout_latents: Vec<Vec<f64>>,
    pub train_prompts: Vec<Tensor>,
    pub heldout_prompts: Vec<Tensor>,
}

impl PlantedFamily {
    /// Fraction of `(prompt - base)` energy lying outside the planted span.
    /// 0 means the prompt sits exactly in the subspace.
    pub fn off_subspace_fraction(&self, prompt: &Tensor) -> f64 {
        let diff: Vec<f64> = prompt.data().iter().zip(self.base.data()).map(|(&p, &b)| p - b).collect();
        let total: f64 = diff.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut residual = diff;
        for b in &self.basis {
            let coef = crate::linalg::dot(&residual, b.data());
            for (r, &bv) in residual.iter_mut().zip(b.data()) {
                *r -= coef * bv;
            }
        }
        residual.iter().map(|v| v * v).sum::<f64>() / total
    }
}

#[derive(Debug, Clone)]
pub struct SynthFamily {
    pub train_tasks: Vec<Task>,
    pub heldout_tasks: Vec<Task>,
    pub family: PlantedFamily,
}

fn random_string(rng: &mut impl Rng, vocab: &Vocab, min_len: usize, max_len: usize) -> Result<String> {
    let len = rng.gen_range(min_len..=max_len);
    let regular = vocab.size() - NUM_SPECIALS;
    let ids: Vec<usize> = (0..len).map(|_| NUM_SPECIALS + rng.gen_range(0..regular)).collect();
    vocab.decode(&ids)
}

fn compose_prompt(base: &Tensor, basis: &[Tensor], latent: &[f64]) -> Tensor {
    let mut prompt = base.clone();
    for (z, b) in latent.iter().zip(basis) {
        for (p, &bv) in prompt.data_mut().iter_mut().zip(b.data()) {
            *p += z * bv;
        }
    }
    prompt
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Decode one task's example pool under a fixed teacher prompt. Inputs are
/// distinct; truncated decodes are resampled.
fn task_examples(
    model: &ModelParams,
    vocab: &Vocab,
    cfg: &SynthFamilyConfig,
    seed: u64,
    label: &str,
    prompt: &Tensor,
) -> Result<Vec<Example>> {
    let mut rng = stream(seed, label);
    let mut seen: HashSet<String> = HashSet::new();
    let mut examples = Vec::with_capacity(cfg.examples_per_task);
    let mut attempts = 0usize;
    while examples.len() < cfg.examples_per_task {
        attempts += 1;
        if attempts > 60 * cfg.examples_per_task {
            return Err(Error::InsufficientData(format!(
                "could not build {} distinct examples (input space too small or decodes keep truncating)",
                cfg.examples_per_task
            )));
        }
        let input = random_string(&mut rng, vocab, cfg.input_len_min, cfg.input_len_max)?;
        if seen.contains(&input) {
            continue;
        }
        let decoded = greedy_decode(model, vocab, Some(prompt), &input, cfg.max_new_tokens)?;
        if decoded.truncated {
            continue;
        }
        seen.insert(input.clone());
        examples.push(Example { input, target: decoded.text });
    }
    Ok(examples)
}

fn distinct_targets(examples: &[Example]) -> usize {
    examples.iter().map(|e| e.target.as_str()).collect::<HashSet<_>>().len()
}

/// Generate a full family. Deterministic in `(model, cfg, seed)`.
pub fn generate_family(
    model: &ModelParams,
    vocab: &Vocab,
    cfg: &SynthFamilyConfig,
    seed: u64,
) -> Result<SynthFamily> {
    cfg.validate()?;
    let d = model.config.d_model;
    let rows = cfg.prompt_rows;
    let flat_dim = rows * d;
    if cfg.subspace_dim > flat_dim {
        return Err(Error::Usage(format!(
            "planted dimension {} exceeds flattened prompt size {flat_dim}",
            cfg.subspace_dim
        )));
    }
    if cfg.input_len_max > model.config.max_len || cfg.max_new_tokens + 1 > model.config.max_len {
        return Err(Error::Usage("family lengths do not fit the model's max_len".into()));
    }
    let base = Tensor::gaussian(&mut stream(seed, "planted/base"), rows, d, 0.0, cfg.base_scale);
    let basis_flat = orthonormal_rows(&mut stream(seed, "planted/basis"), cfg.subspace_dim, flat_dim)?;
    let basis: Vec<Tensor> = (0..cfg.subspace_dim)
        .map(|j| Tensor::from_vec(rows, d, basis_flat.row(j).to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let total = cfg.train_tasks + cfg.heldout_tasks;
    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut prompts: Vec<Tensor> = Vec::with_capacity(total);
    let mut tasks: Vec<Task> = Vec::with_capacity(total);
    for t in 0..total {
        let mut latent_rng = stream(seed, &format!("planted/latent/{t}"));
        let mut accepted = None;
        for attempt in 0..16 {
            let z: Vec<f64> =
                Tensor::gaussian(&mut latent_rng, 1, cfg.subspace_dim, 0.0, cfg.latent_scale).data().to_vec();
            if cfg.subspace_dim > 0
                && !latents.iter().all(|prev| euclidean(prev, &z) >= cfg.latent_min_separation)
            {
                continue;
            }
            let mut prompt = compose_prompt(&base, &basis, &z);
            if cfg.off_subspace_noise > 0.0 {
                let noise = Tensor::gaussian(
                    &mut stream(seed, &format!("planted/noise/{t}/{attempt}")),
                    rows,
                    d,
                    0.0,
                    cfg.off_subspace_noise,
                );
                prompt.add_assign(&noise);
            }
            let examples =
                task_examples(model, vocab, cfg, seed, &format!("planted/data/{t}/{attempt}"), &prompt)?;
            // A task whose targets never vary is unlearnable noise; try a
            // different latent. (With k = 0 all prompts coincide, but targets
            // still vary with the input.)
            if distinct_targets(&examples) >= 2 {
                accepted = Some((z, prompt, examples));
                break;
            }
        }
        let (z, prompt, examples) = accepted.ok_or_else(|| {
            Error::Usage(
                "planted family keeps producing constant-target tasks; increase latent_scale, \
                 input lengths, or warm-up quality"
                    .into(),
            )
        })?;
        let ontology = ONTOLOGY[t % ONTOLOGY.len()].to_string();
        let category = category_of(&ontology).to_string();
        let metric = if category == "cls" { Metric::ExactMatch } else { Metric::TokenF1 };
        let header = TaskHeader {
            name: format!("planted-{t:03}"),
            category,
            ontology,
            metric,
            k: cfg.few_shot_k,
        };
        let task = Task { header, examples };
        task.validate()?;
        latents.push(z);
        prompts.push(prompt);
        tasks.push(task);
    }

    let heldout_tasks = tasks.split_off(cfg.train_tasks);
    let heldout_latents = latents.split_off(cfg.train_tasks);
    let heldout_prompts = prompts.split_off(cfg.train_tasks);
    Ok(SynthFamily {
        train_tasks: tasks,
        heldout_tasks,
        family: PlantedFamily {
            base,
            basis,
            train_latents: latents,
            heldout_latents,
            train_prompts: prompts,
            heldout_prompts,
        },
    })
}

pub const FAMILY_KIND: &str = "planted-family";

/// Persist the ground truth (base, basis, latents, teacher prompts).
pub fn family_checkpoint(
    family: &PlantedFamily,
    train_names: &[String],
    heldout_names: &[String],
    config_hash: &str,
) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(FAMILY_KIND, config_hash);
    ck.set_meta("train_names", serde_json::to_value(train_names)?);
    ck.set_meta("heldout_names", serde_json::to_value(heldout_names)?);
    ck.insert("base", family.base.clone());
    for (j, b) in family.basis.iter().enumerate() {
        ck.insert(format!("basis.{j}"), b.clone());
    }
    let k = family.basis.len();
    let pack = |latents: &[Vec<f64>]| -> Result<Tensor> {
        Tensor::from_vec(latents.len(), k, latents.concat())
    };
    ck.insert("latents.train", pack(&family.train_latents)?);
    ck.insert("latents.heldout", pack(&family.heldout_latents)?);
    for (i, p) in family.train_prompts.iter().enumerate() {
        ck.insert(format!("teacher.train.{i}"), p.clone());
    }
    for (i, p) in family.heldout_prompts.iter().enumerate() {
        ck.insert(format!("teacher.heldout.{i}"), p.clone());
    }
    ck.set_meta("subspace_dim", Value::from(k));
    Ok(ck)
}

/// Rebuild the ground truth plus the stored name lists.
pub fn family_from_checkpoint(ck: &Checkpoint) -> Result<(PlantedFamily, Vec<String>, Vec<String>)> {
    ck.expect_kind(FAMILY_KIND)?;
    let names = |key: &str| -> Result<Vec<String>> {
        let v = ck
            .meta
            .get(key)
            .ok_or_else(|| Error::Parse { line: 0, detail: format!("family checkpoint missing {key}") })?;
        Ok(serde_json::from_value(v.clone())?)
    };
    let train_names = names("train_names")?;
    let heldout_names = names("heldout_names")?;
    let missing = |what: String| Error::Parse { line: 0, detail: what };
    let base = ck.get("base").ok_or_else(|| missing("family checkpoint missing base".into()))?.clone();
    let k = ck.meta.get("subspace_dim").and_then(Value::as_u64).unwrap_or(0) as usize;
    let mut basis = Vec::with_capacity(k);
    for j in 0..k {
        basis.push(
            ck.get(&format!("basis.{j}")).ok_or_else(|| missing(format!("family checkpoint missing basis.{j}")))?.clone(),
        );
    }
    let unpack = |name: &str| -> Result<Vec<Vec<f64>>> {
        let t = ck.get(name).ok_or_else(|| missing(format!("family checkpoint missing {name}")))?;
        Ok((0..t.rows()).map(|i| t.row(i).to_vec()).collect())
    };
    let train_latents = unpack("latents.train")?;
    let heldout_latents = unpack("latents.heldout")?;
    let prompts = |prefix: &str, count: usize| -> Result<Vec<Tensor>> {
        (0..count)
            .map(|i| {
                Ok(ck
                    .get(&format!("{prefix}.{i}"))
                    .ok_or_else(|| missing(format!("family checkpoint missing {prefix}.{i}")))?
                    .clone())
            })
            .collect()
    };
    let train_prompts = prompts("teacher.train", train_names.len())?;
    let heldout_prompts = prompts("teacher.heldout", heldout_names.len())?;
    Ok((
        PlantedFamily { base, basis, train_latents, heldout_latents, train_prompts, heldout_prompts },
        train_names,
        heldout_names,
    ))
}
