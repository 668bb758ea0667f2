//! On-disk layout of a run directory, stage caching, and typed load/save
//! helpers for the artifacts stages exchange.
//!
//! Every stage writes its outputs under `<out>/<stage>/` and finishes with a
//! `meta.json` recording the configuration hash. A stage is a cache hit when
//! its meta matches the current hash; consumers refuse artifacts whose hash
//! differs, so runs never silently mix configurations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subtune_core::checkpoint::Checkpoint;
use subtune_core::eval::ScoreTable;
use subtune_core::model::{model_checkpoint, model_from_checkpoint, ModelParams, Vocab};
use subtune_core::pipeline::{Backbone, TunedTask};
use subtune_core::tasks::{
    family_checkpoint, family_from_checkpoint, read_task, write_task, PlantedFamily, Task,
};
use subtune_core::{Error, Result, Tensor};

pub const PROMPT_KIND: &str = "prompt";
pub const COORDINATES_KIND: &str = "coordinates";

/// A run directory bound to one configuration hash.
pub struct Workspace {
    pub out: PathBuf,
    pub hash: String,
    pub force: bool,
}

#[derive(Serialize, Deserialize)]
struct StageMeta {
    stage: String,
    config_hash: String,
}

impl Workspace {
    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn meta_path(&self, stage: &str) -> PathBuf {
        self.dir(stage).join("meta.json")
    }

    /// Does the stage's meta exist and match the current hash?
    pub fn is_cached(&self, stage: &str) -> bool {
        let path = self.meta_path(stage);
        let Ok(text) = fs::read_to_string(&path) else {
            return false;
        };
        match serde_json::from_str::<StageMeta>(&text) {
            Ok(meta) => meta.config_hash == self.hash,
            Err(_) => false,
        }
    }

    /// True when the stage can be skipped: already built under this exact
    /// configuration and `--force` was not given.
    pub fn should_skip(&self, stage: &str) -> bool {
        if self.force {
            return false;
        }
        let hit = self.is_cached(stage);
        if hit {
            log::info!("{stage}: cache hit, skipping (use --force to rebuild)");
            println!("{stage}: up to date");
        }
        hit
    }

    /// Mark the stage complete under the current hash.
    pub fn finish(&self, stage: &str) -> Result<()> {
        let dir = self.dir(stage);
        fs::create_dir_all(&dir).map_err(io_err)?;
        let meta = StageMeta { stage: stage.to_string(), config_hash: self.hash.clone() };
        fs::write(self.meta_path(stage), serde_json::to_string_pretty(&meta)?)
            .map_err(io_err)?;
        Ok(())
    }

    /// The stage's directory, or an orchestration error naming what to run.
    pub fn require(&self, stage: &str) -> Result<PathBuf> {
        if self.meta_path(stage).exists() && !self.is_cached(stage) {
            return Err(Error::MissingArtifact(format!(
                "{stage} (present but built under a different configuration; rerun it)"
            )));
        }
        if !self.is_cached(stage) {
            return Err(Error::MissingArtifact(stage.to_string()));
        }
        Ok(self.dir(stage))
    }

    pub fn ensure_dir(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.dir(stage);
        fs::create_dir_all(&dir).map_err(io_err)?;
        Ok(dir)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

// ---------------------------------------------------------------- backbone

pub fn save_backbone(ws: &Workspace, backbone: &Backbone) -> Result<()> {
    let dir = ws.ensure_dir("backbone")?;
    let ck = model_checkpoint(&backbone.params, &backbone.vocab, &ws.hash)?;
    ck.save(&dir.join("model.stcp"))?;
    ws.finish("backbone")
}

pub fn load_backbone(ws: &Workspace) -> Result<Backbone> {
    let dir = ws.require("backbone")?;
    let ck = Checkpoint::load(&dir.join("model.stcp"))?;
    let (params, vocab): (ModelParams, Vocab) = model_from_checkpoint(&ck)?;
    Ok(Backbone { params, vocab })
}

// ------------------------------------------------------------------- tasks

pub struct TaskSet {
    pub train: Vec<Task>,
    pub heldout: Vec<Task>,
}

pub fn save_tasks(
    ws: &Workspace,
    family: &PlantedFamily,
    train: &[Task],
    heldout: &[Task],
) -> Result<()> {
    let dir = ws.ensure_dir("tasks")?;
    for (partition, tasks) in [("train", train), ("heldout", heldout)] {
        let sub = dir.join(partition);
        fs::create_dir_all(&sub).map_err(io_err)?;
        for task in tasks {
            write_task(&sub.join(format!("{}.jsonl", task.header.name)), task)?;
        }
    }
    let names = |tasks: &[Task]| tasks.iter().map(|t| t.header.name.clone()).collect::<Vec<_>>();
    let ck = family_checkpoint(family, &names(train), &names(heldout), &ws.hash)?;
    ck.save(&dir.join("family.stcp"))?;
    ws.finish("tasks")
}

pub fn load_tasks(ws: &Workspace) -> Result<TaskSet> {
    let dir = ws.require("tasks")?;
    let ck = Checkpoint::load(&dir.join("family.stcp"))?;
    let (_family, train_names, heldout_names) = family_from_checkpoint(&ck)?;
    let read = |partition: &str, names: &[String]| -> Result<Vec<Task>> {
        names
            .iter()
            .map(|name| read_task(&dir.join(partition).join(format!("{name}.jsonl"))))
            .collect()
    };
    Ok(TaskSet {
        train: read("train", &train_names)?,
        heldout: read("heldout", &heldout_names)?,
    })
}

// ----------------------------------------------------------------- prompts

/// Persist one tuned prompt (or coordinate vector) with its selection
/// details.
pub fn save_tuned(
    dir: &Path,
    kind: &str,
    hash: &str,
    partition: &str,
    tuned: &TunedTask,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut ck = Checkpoint::new(kind, hash);
    ck.insert("values", tuned.prompt.clone());
    ck.set_meta("task", tuned.name.clone().into());
    ck.set_meta("partition", partition.into());
    ck.set_meta("lr", tuned.lr.into());
    ck.set_meta("batch_size", (tuned.batch_size as u64).into());
    ck.set_meta("best_step", (tuned.best_step as u64).into());
    ck.set_meta("dev_score", tuned.dev_score.into());
    ck.set_meta("test_score", tuned.test_score.into());
    ck.save(&dir.join(format!("{}.stcp", tuned.name)))
}

pub fn load_tuned(dir: &Path, kind: &str, name: &str) -> Result<TunedTask> {
    let mut ck = Checkpoint::load(&dir.join(format!("{name}.stcp")))?;
    ck.expect_kind(kind)?;
    let meta_f64 = |ck: &Checkpoint, key: &str| -> Result<f64> {
        ck.meta.get(key).and_then(|v| v.as_f64()).ok_or_else(|| Error::Parse {
            line: 0,
            detail: format!("checkpoint for {name:?} is missing numeric meta {key:?}"),
        })
    };
    let prompt: Tensor = ck.take("values")?;
    Ok(TunedTask {
        name: ck.meta_str("task")?.to_string(),
        lr: meta_f64(&ck, "lr")?,
        batch_size: meta_f64(&ck, "batch_size")? as usize,
        best_step: meta_f64(&ck, "best_step")? as usize,
        dev_score: meta_f64(&ck, "dev_score")?,
        test_score: meta_f64(&ck, "test_score")?,
        prompt,
    })
}

/// Load one partition's bank in the given task order.
pub fn load_bank(dir: &Path, kind: &str, names: &[String]) -> Result<Vec<TunedTask>> {
    names.iter().map(|n| load_tuned(dir, kind, n)).collect()
}

// ------------------------------------------------------------------ tables

pub fn save_scores(path: &Path, table: &ScoreTable, hash: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::write(path, table.to_csv(Some(hash))?).map_err(io_err)
}

pub fn load_scores(path: &Path) -> Result<(ScoreTable, Option<String>)> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            io_err(e)
        }
    })?;
    ScoreTable::from_csv(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::write(path, text).map_err(io_err)
}
