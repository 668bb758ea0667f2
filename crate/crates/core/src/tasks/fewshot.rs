//! Few-shot splits.
//!
//! The last `test_size` examples of a task's pool are its immutable test
//! block. Train and dev examples are sampled (without replacement) from the
//! remaining prefix using a stream keyed by the task name, so re-sampling
//! with a new seed changes the support sets but never the test data.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tasks::types::{Example, Task, TaskHeader};

pub const CLS_DEFAULT_K: usize = 16;
pub const NON_CLS_DEFAULT_K: usize = 32;

/// The task's few-shot budget: its own `K` if set, else the category default.
pub fn resolve_k(header: &TaskHeader) -> usize {
    header.k.unwrap_or(if header.is_cls() { CLS_DEFAULT_K } else { NON_CLS_DEFAULT_K })
}

#[derive(Debug, Clone)]
pub struct FewShotSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn few_shot_split(task: &Task, dev_size: usize, test_size: usize, seed: u64) -> Result<FewShotSplit> {
    few_shot_split_with_k(task, resolve_k(&task.header), dev_size, test_size, seed)
}

/// Like [`few_shot_split`] but with an explicit train budget, for shot-count
/// sweeps (e.g. doubling `K`) that override the task's default.
pub fn few_shot_split_with_k(
    task: &Task,
    k: usize,
    dev_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    let pool = task.examples.len();
    if k == 0 {
        return Err(Error::Usage("train budget k must be at least 1".into()));
    }
    if test_size == 0 {
        return Err(Error::Usage("test block must be non-empty".into()));
    }
    if pool < k + dev_size + test_size {
        return Err(Error::InsufficientData(format!(
            "task {:?} has {pool} examples but needs {k} train + {dev_size} dev + {test_size} test",
            task.header.name
        )));
    }
    let candidates = pool - test_size;
    let mut idx: Vec<usize> = (0..candidates).collect();
    let mut rng = stream(seed, &format!("fewshot/{}", task.header.name));
    idx.shuffle(&mut rng);
    let train = idx[..k].iter().map(|&i| task.examples[i].clone()).collect();
    let dev = idx[k..k + dev_size].iter().map(|&i| task.examples[i].clone()).collect();
    let test = task.examples[candidates..].to_vec();
    Ok(FewShotSplit { train, dev, test })
}

/// Re-draw train/dev support sets with a new seed, keeping the test block
/// untouched — the unseen-data protocol. Split sizes are copied from the
/// reference split, so a resampled 2K-shot split stays 2K-shot.
pub fn resample(task: &Task, reference: &FewShotSplit, new_seed: u64) -> Result<FewShotSplit> {
    let out = few_shot_split_with_k(
        task,
        reference.train.len(),
        reference.dev.len(),
        reference.test.len(),
        new_seed,
    )?;
    if out.test != reference.test {
        return Err(Error::Usage(format!(
            "resample: task {:?} does not own the reference split (test blocks differ)",
            task.header.name
        )));
    }
    Ok(out)
}
