//! Intrinsic subspace tuning: optimize a handful of coordinates inside a
//! frozen subspace instead of a whole prompt, and optionally use the result
//! to warm-start ordinary prompt tuning.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Vocab};
use crate::prompt::{train, TrainConfig, TrainJob, TrainOutcome, TrainTarget};
use crate::subspace::Subspace;
use crate::tasks::{FewShotSplit, Task};

/// Where the coordinate vector starts.
#[derive(Debug, Clone)]
pub enum ThetaInit {
    /// The origin of the coordinate system (the default).
    Zeros,
    /// An explicit `d_I×1` vector.
    Given(Tensor),
    /// The projection of an existing `n×d` prompt into the space.
    FromPrompt(Tensor),
}

impl ThetaInit {
    pub fn resolve(&self, space: &Subspace) -> Result<Tensor> {
        match self {
            ThetaInit::Zeros => Ok(Tensor::zeros(space.dim(), 1)),
            ThetaInit::Given(theta) => {
                if theta.shape() != (space.dim(), 1) {
                    return Err(Error::dim(
                        "theta_init",
                        format!("{:?} vs expected {}x1", theta.shape(), space.dim()),
                    ));
                }
                Ok(theta.clone())
            }
            ThetaInit::FromPrompt(prompt) => space.project(prompt),
        }
    }
}

/// Tune coordinates in `space` on one task. A thin wrapper over the shared
/// training loop with a subspace target.
#[allow(clippy::too_many_arguments)]
pub fn ist_train(
    model: &ModelParams,
    vocab: &Vocab,
    task: &Task,
    split: &FewShotSplit,
    space: &Subspace,
    init: &ThetaInit,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = init.resolve(space)?;
    train(&TrainJob {
        model,
        vocab,
        task,
        split,
        target: TrainTarget::Subspace { space, init },
        config,
        seed,
    })
}

/// Both stages of subspace-initialized prompt tuning.
#[derive(Debug)]
pub struct IptOutcome {
    /// Stage 1: coordinate tuning inside the subspace.
    pub ist: TrainOutcome,
    /// Stage 2: free prompt tuning warm-started from stage 1's prompt.
    pub pt: TrainOutcome,
}

/// Subspace-initialized prompt tuning: tune coordinates first, then release
/// the back-projected prompt and keep tuning it without the subspace
/// constraint. Both stages draw the same batch sequence (the stream depends
/// only on the seed and task).
#[allow(clippy::too_many_arguments)]
pub fn ipt_train(
    model: &ModelParams,
    vocab: &Vocab,
    task: &Task,
    split: &FewShotSplit,
    space: &Subspace,
    init: &ThetaInit,
    ist_config: &TrainConfig,
    pt_config: &TrainConfig,
    seed: u64,
) -> Result<IptOutcome> {
    let ist = ist_train(model, vocab, task, split, space, init, ist_config, seed)?;
    let theta = ist
        .tuned
        .coordinates()
        .expect("a subspace target always yields coordinates");
    let prompt = space.back_project(theta)?;
    let pt = train(&TrainJob {
        model,
        vocab,
        task,
        split,
        target: TrainTarget::Prompt { init: prompt },
        config: pt_config,
        seed,
    })?;
    Ok(IptOutcome { ist, pt })
}
