//! Stage implementations. Each command loads what it needs from earlier
//! stages (failing with an orchestration error that names the missing one),
//! does its work through the core pipeline functions, writes its artifacts,
//! and marks itself complete. Completed stages are skipped unless `--force`
//! is given or the configuration hash changed.

use std::collections::HashMap;
use std::fmt::Write as _;

use subtune_core::checkpoint::Checkpoint;
use subtune_core::eval::{
    fmt_sig6, stability_std, ChallengeKind, PartitionReport, ScoreRow, ScoreTable, SweepKind,
};
use subtune_core::pipeline::{
    self, Backbone, PipelineConfig, StabilityMethod, SweepInputs, TunedTask,
};
use subtune_core::subspace::Subspace;
use subtune_core::tasks::{FewShotSplit, Task};
use subtune_core::{Error, Result};

use crate::artifacts::{
    load_backbone, load_bank, load_scores, load_tasks, save_backbone, save_scores, save_tasks,
    save_tuned, write_text, TaskSet, Workspace, COORDINATES_KIND, PROMPT_KIND,
};

pub struct Ctx {
    pub ws: Workspace,
    pub cfg: PipelineConfig,
}

const PARTITIONS: [&str; 2] = ["train", "heldout"];

/// Everything most stages start from: backbone, tasks, and fresh splits
/// (splits are recomputed deterministically, never stored).
struct Loaded {
    backbone: Backbone,
    tasks: TaskSet,
    train_splits: Vec<FewShotSplit>,
    heldout_splits: Vec<FewShotSplit>,
}

impl Loaded {
    fn partition(&self, name: &str) -> (&[Task], &[FewShotSplit]) {
        match name {
            "train" => (&self.tasks.train, &self.train_splits),
            _ => (&self.tasks.heldout, &self.heldout_splits),
        }
    }
}

fn load(ctx: &Ctx) -> Result<Loaded> {
    let backbone = load_backbone(&ctx.ws)?;
    let tasks = load_tasks(&ctx.ws)?;
    let train_splits = pipeline::split_all(&ctx.cfg, &tasks.train)?;
    let heldout_splits = pipeline::split_all(&ctx.cfg, &tasks.heldout)?;
    Ok(Loaded { backbone, tasks, train_splits, heldout_splits })
}

fn names(tasks: &[Task]) -> Vec<String> {
    tasks.iter().map(|t| t.header.name.clone()).collect()
}

/// Map `(task, partition) → score` for one method of a score table.
fn score_map(table: &ScoreTable, method: &str) -> HashMap<(String, String), f64> {
    table
        .rows
        .iter()
        .filter(|r| r.method == method)
        .map(|r| ((r.task.clone(), r.partition.clone()), r.score))
        .collect()
}

fn bank_dir(ws: &Workspace, stage: &str, partition: &str) -> std::path::PathBuf {
    ws.dir(stage).join(partition)
}

fn load_partition_bank(
    ws: &Workspace,
    stage: &str,
    kind: &str,
    partition: &str,
    tasks: &[Task],
) -> Result<Vec<TunedTask>> {
    load_bank(&bank_dir(ws, stage, partition), kind, &names(tasks))
}

// --------------------------------------------------------------- gen-tasks

pub fn gen_tasks(ctx: &Ctx) -> Result<()> {
    if ctx.ws.should_skip("backbone") && ctx.ws.should_skip("tasks") {
        return Ok(());
    }
    let backbone = pipeline::build_backbone(&ctx.cfg)?;
    save_backbone(&ctx.ws, &backbone)?;
    println!(
        "backbone: {} params over a {}-symbol vocabulary",
        backbone.params.named_tensors().iter().map(|(_, t)| t.len()).sum::<usize>(),
        backbone.vocab.size()
    );
    let family = pipeline::build_family(&ctx.cfg, &backbone)?;
    save_tasks(&ctx.ws, &family.family, &family.train_tasks, &family.heldout_tasks)?;
    println!(
        "tasks: {} train + {} held-out, planted dimension {}",
        family.train_tasks.len(),
        family.heldout_tasks.len(),
        ctx.cfg.family.subspace_dim
    );
    Ok(())
}

// ---------------------------------------------------------------- train-pt

pub fn train_pt(ctx: &Ctx) -> Result<()> {
    if ctx.ws.should_skip("pt") {
        return Ok(());
    }
    let loaded = load(ctx)?;
    let mut table = ScoreTable::default();
    for partition in PARTITIONS {
        let (tasks, splits) = loaded.partition(partition);
        let label = if partition == "train" { "pt" } else { "pt-heldout" };
        let bank = pipeline::tune_prompt_bank(&ctx.cfg, &loaded.backbone, tasks, splits, label)?;
        let dir = bank_dir(&ctx.ws, "pt", partition);
        for tuned in &bank {
            save_tuned(&dir, PROMPT_KIND, &ctx.ws.hash, partition, tuned)?;
            table.push(ScoreRow {
                task: tuned.name.clone(),
                method: "pt".into(),
                partition: partition.into(),
                d_i: None,
                seed: ctx.cfg.seed,
                score: tuned.test_score,
                baseline_pt: Some(tuned.test_score),
                baseline_ft: None,
            });
        }
        println!(
            "pt/{partition}: {} tasks, mean test score {:.4}",
            bank.len(),
            bank.iter().map(|t| t.test_score).sum::<f64>() / bank.len().max(1) as f64
        );
    }
    table.sort();
    save_scores(&ctx.ws.dir("pt").join("scores.csv"), &table, &ctx.ws.hash)?;
    ctx.ws.finish("pt")
}

// ---------------------------------------------------------------- train-ft

pub fn train_ft(ctx: &Ctx) -> Result<()> {
    if ctx.ws.should_skip("ft") {
        return Ok(());
    }
    let loaded = load(ctx)?;
    let pt_scores = if ctx.ws.is_cached("pt") {
        score_map(&load_scores(&ctx.ws.dir("pt").join("scores.csv"))?.0, "pt")
    } else {
        HashMap::new()
    };
    let mut table = ScoreTable::default();
    for partition in PARTITIONS {
        let (tasks, splits) = loaded.partition(partition);
        let scores = pipeline::fine_tune_scores(&ctx.cfg, &loaded.backbone, tasks, splits)?;
        for (task, score) in tasks.iter().zip(&scores) {
            table.push(ScoreRow {
                task: task.header.name.clone(),
                method: "ft".into(),
                partition: partition.into(),
                d_i: None,
                seed: ctx.cfg.seed,
                score: *score,
                baseline_pt: pt_scores
                    .get(&(task.header.name.clone(), partition.to_string()))
                    .copied(),
                baseline_ft: Some(*score),
            });
        }
        println!(
            "ft/{partition}: {} tasks, mean test score {:.4}",
            scores.len(),
            scores.iter().sum::<f64>() / scores.len().max(1) as f64
        );
    }
    table.sort();
    save_scores(&ctx.ws.dir("ft").join("scores.csv"), &table, &ctx.ws.hash)?;
    ctx.ws.finish("ft")
}

// --------------------------------------------------------------------- msf

pub fn msf(ctx: &Ctx) -> Result<()> {
    if ctx.ws.should_skip("msf") {
        return Ok(());
    }
    ctx.ws.require("pt")?;
    let loaded = load(ctx)?;
    let bank = load_partition_bank(&ctx.ws, "pt", PROMPT_KIND, "train", &loaded.tasks.train)?;
    let outcome = pipeline::find_subspace(
        &ctx.cfg,
        &loaded.backbone,
        &loaded.tasks.train,
        &loaded.train_splits,
        &bank,
        None,
    )?;
    let dir = ctx.ws.ensure_dir("msf")?;
    outcome.subspace.to_checkpoint(&ctx.ws.hash).save(&dir.join("subspace.stcp"))?;

    let mut curve = String::from("step,objective,dev_score\n");
    for point in &outcome.curve {
        let dev = point.dev_score.map(fmt_sig6).unwrap_or_default();
        let _ = writeln!(curve, "{},{},{}", point.step, fmt_sig6(point.objective), dev);
    }
    write_text(&dir.join("curve.csv"), &curve)?;

    let summary = serde_json::json!({
        "latent_dim": outcome.subspace.dim(),
        "best_step": outcome.best_step,
        "best_dev_score": outcome.best_dev_score,
        "reconstruction_error": outcome.reconstruction_error,
    });
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "msf: d_I={} selected at step {}, bank reconstruction error {:.6}",
        outcome.subspace.dim(),
        outcome.best_step,
        outcome.reconstruction_error
    );
    ctx.ws.finish("msf")
}

pub fn load_subspace(ws: &Workspace) -> Result<Subspace> {
    let dir = ws.require("msf")?;
    Subspace::from_checkpoint(&Checkpoint::load(&dir.join("subspace.stcp"))?)
}

// --------------------------------------------------------------------- ist

/// Shared shape of the coordinate-tuning and warm-start stages: run a bank
/// builder per partition, persist the tuned values, and record scores with
/// prompt-tuning baselines attached.
fn tuned_stage(
    ctx: &Ctx,
    stage: &str,
    kind: &str,
    d_i: usize,
    run: impl Fn(&Loaded, &str) -> Result<Vec<TunedTask>>,
) -> Result<()> {
    if ctx.ws.should_skip(stage) {
        return Ok(());
    }
    ctx.ws.require("pt")?;
    let loaded = load(ctx)?;
    let pt_scores = score_map(&load_scores(&ctx.ws.dir("pt").join("scores.csv"))?.0, "pt");
    let ft_scores = if ctx.ws.is_cached("ft") {
        score_map(&load_scores(&ctx.ws.dir("ft").join("scores.csv"))?.0, "ft")
    } else {
        HashMap::new()
    };
    let mut table = ScoreTable::default();
    for partition in PARTITIONS {
        let bank = run(&loaded, partition)?;
        let dir = bank_dir(&ctx.ws, stage, partition);
        for tuned in &bank {
            save_tuned(&dir, kind, &ctx.ws.hash, partition, tuned)?;
            let key = (tuned.name.clone(), partition.to_string());
            table.push(ScoreRow {
                task: tuned.name.clone(),
                method: stage.into(),
                partition: partition.into(),
                d_i: Some(d_i),
                seed: ctx.cfg.seed,
                score: tuned.test_score,
                baseline_pt: pt_scores.get(&key).copied(),
                baseline_ft: ft_scores.get(&key).copied(),
            });
        }
        println!(
            "{stage}/{partition}: {} tasks, mean test score {:.4}",
            bank.len(),
            bank.iter().map(|t| t.test_score).sum::<f64>() / bank.len().max(1) as f64
        );
    }
    table.sort();
    save_scores(&ctx.ws.dir(stage).join("scores.csv"), &table, &ctx.ws.hash)?;
    ctx.ws.finish(stage)
}

pub fn ist(ctx: &Ctx) -> Result<()> {
    let space = load_subspace(&ctx.ws)?;
    let dim = space.dim();
    tuned_stage(ctx, "ist", COORDINATES_KIND, dim, |loaded, partition| {
        let (tasks, splits) = loaded.partition(partition);
        pipeline::tune_coordinate_bank(
            &ctx.cfg,
            &loaded.backbone,
            tasks,
            splits,
            &space,
            &format!("ist/{partition}"),
        )
    })
}

pub fn ipt_init(ctx: &Ctx) -> Result<()> {
    let space = load_subspace(&ctx.ws)?;
    let dim = space.dim();
    tuned_stage(ctx, "ipt", PROMPT_KIND, dim, |loaded, partition| {
        let (tasks, splits) = loaded.partition(partition);
        pipeline::warm_start_bank(
            &ctx.cfg,
            &loaded.backbone,
            tasks,
            splits,
            &space,
            &format!("ipt/{partition}"),
        )
    })
}

// --------------------------------------------------------------- challenge

pub fn challenge(ctx: &Ctx, kind_name: &str) -> Result<()> {
    let kind = ChallengeKind::parse(kind_name)?;
    let stage = format!("challenge/{}", kind.name());
    if ctx.ws.should_skip(&stage) {
        return Ok(());
    }
    ctx.ws.require("pt")?;
    let space = load_subspace(&ctx.ws)?;
    let loaded = load(ctx)?;
    let partition = match kind {
        ChallengeKind::IstUnseenTask => "heldout",
        _ => "train",
    };
    let (tasks, splits) = loaded.partition(partition);
    let bank = load_partition_bank(&ctx.ws, "pt", PROMPT_KIND, partition, tasks)?;
    let ft = if ctx.ws.is_cached("ft") {
        let map = score_map(&load_scores(&ctx.ws.dir("ft").join("scores.csv"))?.0, "ft");
        let scores: Vec<f64> = tasks
            .iter()
            .filter_map(|t| map.get(&(t.header.name.clone(), partition.to_string())).copied())
            .collect();
        (scores.len() == tasks.len()).then_some(scores)
    } else {
        None
    };
    let report = pipeline::challenge(
        &ctx.cfg,
        &loaded.backbone,
        kind,
        &space,
        partition,
        tasks,
        splits,
        &bank,
        ft.as_deref(),
    )?;
    save_challenge_report(ctx, &stage, &report)?;
    ctx.ws.finish(&stage)
}

fn save_challenge_report(ctx: &Ctx, stage: &str, report: &PartitionReport) -> Result<()> {
    let dir = ctx.ws.ensure_dir(stage)?;
    save_scores(&dir.join("scores.csv"), &report.table, &ctx.ws.hash)?;
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(report)?)?;
    println!(
        "{stage}: {} tasks on {}, E_abs {:.4}, E_rel(PT) {:.1}%",
        report.task_count,
        report.partition,
        report.e_abs,
        report.e_rel_pt.percent()
    );
    Ok(())
}

// ------------------------------------------------------------------- sweep

pub fn sweep(ctx: &Ctx, kind_name: &str) -> Result<()> {
    let kind = SweepKind::parse(kind_name)?;
    let stage = format!("sweep/{}", kind.name());
    if ctx.ws.should_skip(&stage) {
        return Ok(());
    }
    ctx.ws.require("pt")?;
    let loaded = load(ctx)?;
    let train_bank = load_partition_bank(&ctx.ws, "pt", PROMPT_KIND, "train", &loaded.tasks.train)?;
    let heldout_bank =
        load_partition_bank(&ctx.ws, "pt", PROMPT_KIND, "heldout", &loaded.tasks.heldout)?;
    let inputs = SweepInputs {
        backbone: &loaded.backbone,
        train_tasks: &loaded.tasks.train,
        train_splits: &loaded.train_splits,
        train_bank: &train_bank,
        heldout_tasks: &loaded.tasks.heldout,
        heldout_splits: &loaded.heldout_splits,
        heldout_bank: &heldout_bank,
    };
    let points = pipeline::run_sweep(&ctx.cfg, kind, &inputs)?;

    let dir = ctx.ws.ensure_dir(&stage)?;
    let mut csv = String::from("value,d_i,task_count,e_abs,e_rel_pt_percent,e_rel_used,e_rel_excluded\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_sig6(p.value),
            p.report.d_i,
            p.report.task_count,
            fmt_sig6(p.report.e_abs),
            fmt_sig6(p.report.e_rel_pt.percent()),
            p.report.e_rel_pt.used,
            p.report.e_rel_pt.excluded
        );
    }
    write_text(&dir.join("points.csv"), &csv)?;
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&points)?)?;
    for p in &points {
        println!(
            "sweep/{}: value {} → E_abs {:.4}, E_rel(PT) {:.1}%",
            kind.name(),
            p.value,
            p.report.e_abs,
            p.report.e_rel_pt.percent()
        );
    }
    ctx.ws.finish(&stage)
}

// --------------------------------------------------------------- stability

pub fn stability(ctx: &Ctx, methods_arg: &str, partition: &str) -> Result<()> {
    if ctx.ws.should_skip("stability") {
        return Ok(());
    }
    let methods: Vec<StabilityMethod> = methods_arg
        .split(',')
        .map(|m| StabilityMethod::parse(m.trim()))
        .collect::<Result<_>>()?;
    if !PARTITIONS.contains(&partition) {
        return Err(Error::Usage(format!(
            "unknown partition {partition:?}; expected train or heldout"
        )));
    }
    let needs_space = methods.iter().any(|m| *m != StabilityMethod::ColdPrompt);
    let space = if needs_space { Some(load_subspace(&ctx.ws)?) } else { None };
    let loaded = load(ctx)?;
    let (tasks, splits) = loaded.partition(partition);
    let seeds = pipeline::stability_seeds(&ctx.cfg);

    let mut table = ScoreTable::default();
    let mut summaries = Vec::new();
    for method in &methods {
        let scores = pipeline::collect_method_scores(
            &ctx.cfg,
            &loaded.backbone,
            tasks,
            splits,
            space.as_ref(),
            *method,
            &seeds,
        )?;
        for (task, runs) in &scores {
            for (seed, score) in seeds.iter().zip(runs) {
                table.push(ScoreRow {
                    task: task.clone(),
                    method: method.name().into(),
                    partition: partition.into(),
                    d_i: space.as_ref().map(|s| s.dim()),
                    seed: *seed,
                    score: *score,
                    baseline_pt: None,
                    baseline_ft: None,
                });
            }
        }
        let report = stability_std(&scores)?;
        println!(
            "stability/{}: mean per-task std {:.4} over {} tasks × {} runs",
            method.name(),
            report.mean_std,
            report.per_task.len(),
            seeds.len()
        );
        summaries.push(serde_json::json!({
            "method": method.name(),
            "partition": partition,
            "mean_std": report.mean_std,
            "excluded": report.excluded,
            "per_task": report.per_task,
        }));
    }
    table.sort();
    let dir = ctx.ws.ensure_dir("stability")?;
    save_scores(&dir.join("scores.csv"), &table, &ctx.ws.hash)?;
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&summaries)?)?;
    ctx.ws.finish("stability")
}

// --------------------------------------------------------------------- pca

pub fn pca(ctx: &Ctx) -> Result<()> {
    use subtune_core::analysis::{pca_2d, points_csv, scatter_svg, silhouette, ProjectedPoint};
    if ctx.ws.should_skip("pca") {
        return Ok(());
    }
    ctx.ws.require("pt")?;
    let loaded = load(ctx)?;

    let mut vectors = Vec::new();
    let mut meta: Vec<(&Task, &str)> = Vec::new();
    for partition in PARTITIONS {
        let (tasks, _) = loaded.partition(partition);
        let bank = load_partition_bank(&ctx.ws, "pt", PROMPT_KIND, partition, tasks)?;
        for (task, tuned) in tasks.iter().zip(&bank) {
            vectors.push(tuned.prompt.data().to_vec());
            meta.push((task, partition));
        }
    }
    let pca = pca_2d(&vectors)?;
    let points: Vec<ProjectedPoint> = meta
        .iter()
        .zip(&pca.coords)
        .map(|((task, partition), xy)| ProjectedPoint {
            task: task.header.name.clone(),
            category: task.header.category.clone(),
            ontology: task.header.ontology.clone(),
            partition: partition.to_string(),
            x: xy[0],
            y: xy[1],
        })
        .collect();

    // Cluster quality over categories when the tasks have more than one;
    // otherwise over the train/heldout partition.
    let categories: Vec<&str> = points.iter().map(|p| p.category.as_str()).collect();
    let (label_kind, labels) = if distinct(&categories) > 1 {
        ("category", index_labels(&categories))
    } else {
        let partitions: Vec<&str> = points.iter().map(|p| p.partition.as_str()).collect();
        ("partition", index_labels(&partitions))
    };
    let sil = silhouette(&pca.coords, &labels)?;

    let dir = ctx.ws.ensure_dir("pca")?;
    write_text(&dir.join("points.csv"), &points_csv(&points, Some(&ctx.ws.hash))?)?;
    write_text(
        &dir.join("scatter.svg"),
        &scatter_svg(&points, "tuned prompts, first two principal components", Some(&ctx.ws.hash)),
    )?;
    let summary = serde_json::json!({
        "explained": pca.explained,
        "degenerate": pca.degenerate,
        "silhouette_over": label_kind,
        "silhouette": sil,
    });
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "pca: explained variance {:.3}/{:.3}, silhouette over {label_kind} {:.3}",
        pca.explained[0], pca.explained[1], sil
    );
    ctx.ws.finish("pca")
}

fn distinct(labels: &[&str]) -> usize {
    let mut seen: Vec<&str> = Vec::new();
    for l in labels {
        if !seen.contains(l) {
            seen.push(l);
        }
    }
    seen.len()
}

fn index_labels(labels: &[&str]) -> Vec<usize> {
    let mut order: Vec<&str> = Vec::new();
    labels
        .iter()
        .map(|l| {
            if let Some(i) = order.iter().position(|o| o == l) {
                i
            } else {
                order.push(l);
                order.len() - 1
            }
        })
        .collect()
}

// ------------------------------------------------------------------ report

pub fn report(ctx: &Ctx, allow_mixed: bool) -> Result<()> {
    let mut merged = ScoreTable::default();
    let mut sources = Vec::new();
    let candidates = score_csv_paths(&ctx.ws);
    for path in &candidates {
        if !path.exists() {
            continue;
        }
        let (table, hash) = load_scores(path)?;
        if hash.as_deref() != Some(ctx.ws.hash.as_str()) {
            if allow_mixed {
                log::warn!(
                    "{}: configuration hash differs from the current config; mixing anyway",
                    path.display()
                );
            } else {
                return Err(Error::Usage(format!(
                    "{} was produced under a different configuration; pass --allow-mixed to combine anyway",
                    path.display()
                )));
            }
        }
        sources.push(path.display().to_string());
        merged.rows.extend(table.rows);
    }
    if merged.rows.is_empty() {
        return Err(Error::MissingArtifact(
            "scores (no stage has produced a score table yet; run train-pt first)".into(),
        ));
    }
    merged.sort();

    let mut groups: Vec<(String, String)> = Vec::new();
    for row in &merged.rows {
        let key = (row.method.clone(), row.partition.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups.sort();

    let mut lines = Vec::new();
    let mut json_groups = Vec::new();
    for (method, partition) in &groups {
        let e_abs = merged.e_abs(method, partition)?;
        let e_rel = merged.e_rel_pt(method, partition).ok();
        let rel_text = e_rel
            .map(|r| format!("{:.1}% of PT ({} tasks)", r.percent(), r.used))
            .unwrap_or_else(|| "-".into());
        lines.push(format!("{method:>4} on {partition:<7}  E_abs {e_abs:>8.4}  E_rel {rel_text}"));
        json_groups.push(serde_json::json!({
            "method": method,
            "partition": partition,
            "rows": merged.select(method, partition).len(),
            "e_abs": e_abs,
            "e_rel_pt_percent": e_rel.map(|r| r.percent()),
        }));
    }

    let dir = ctx.ws.ensure_dir("report")?;
    save_scores(&dir.join("summary.csv"), &merged, &ctx.ws.hash)?;
    let summary = serde_json::json!({
        "config_hash": ctx.ws.hash,
        "sources": sources,
        "groups": json_groups,
    });
    write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("report over {} rows from {} tables:", merged.rows.len(), sources.len());
    for line in lines {
        println!("  {line}");
    }
    ctx.ws.finish("report")
}

fn score_csv_paths(ws: &Workspace) -> Vec<std::path::PathBuf> {
    let mut paths = vec![
        ws.dir("pt").join("scores.csv"),
        ws.dir("ft").join("scores.csv"),
        ws.dir("ist").join("scores.csv"),
        ws.dir("ipt").join("scores.csv"),
        ws.dir("stability").join("scores.csv"),
    ];
    for kind in [
        ChallengeKind::MsfTrainRecon,
        ChallengeKind::MsfTestRecon,
        ChallengeKind::IstSame,
        ChallengeKind::IstUnseenData,
        ChallengeKind::IstUnseenTask,
    ] {
        paths.push(ws.dir(&format!("challenge/{}", kind.name())).join("scores.csv"));
    }
    paths
}

