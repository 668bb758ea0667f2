//! `subtune`: drive the whole experiment from the shell, one stage per
//! subcommand, with per-stage caching keyed on the configuration hash.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 a prerequisite stage has not
//! been run (the message names it), 3 the configuration violates the schema
//! (the message names the field).

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subtune_core::pipeline::config_hash;
use subtune_core::{Error, Result};

use artifacts::Workspace;
use commands::Ctx;

#[derive(Parser)]
#[command(
    name = "subtune",
    about = "Soft-prompt tuning, shared-subspace finding, and low-dimensional tuning \
             on a small frozen seq2seq transformer",
    version
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config field, e.g. --set pt.train.max_steps=500
    /// (repeatable; values are TOML literals).
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    sets: Vec<String>,

    /// Run directory for artifacts (falls back to $SUBTUNE_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Rebuild stages even when they are up to date.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for task-parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the backbone and plant the synthetic task family.
    GenTasks,
    /// Tune a soft prompt per task (both partitions) with a small grid.
    TrainPt,
    /// Fine-tune the full backbone per task as a reference baseline.
    TrainFt,
    /// Fit the shared low-dimensional subspace to the tuned prompt bank.
    Msf,
    /// Tune coordinates inside the found subspace per task.
    Ist,
    /// Warm-start free prompt tuning from tuned subspace coordinates.
    IptInit,
    /// Score the subspace under one challenge kind.
    Challenge {
        /// msf_train_recon, msf_test_recon, ist_same, ist_unseen_data, or
        /// ist_unseen_task.
        #[arg(long)]
        kind: String,
    },
    /// Refit and score the subspace across one axis.
    Sweep {
        /// d_i, task_fraction, or shots.
        #[arg(long)]
        kind: String,
    },
    /// Measure seed variance of tuning methods at fixed hyperparameters.
    Stability {
        /// Comma-separated subset of pt,ist,ipt.
        #[arg(long, default_value = "pt,ist,ipt")]
        methods: String,
        /// train or heldout.
        #[arg(long, default_value = "heldout")]
        partition: String,
    },
    /// Project the tuned prompt bank onto its first two principal components.
    Pca,
    /// Combine all score tables into one summary.
    Report {
        /// Permit combining artifacts produced under different
        /// configuration hashes.
        #[arg(long)]
        allow_mixed: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::MissingArtifact(_) => ExitCode::from(2),
                Error::Config { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("could not size the worker pool: {e}")))?;
    }
    let cfg = config::load(cli.config.as_deref(), &cli.sets)?;
    let hash = config_hash(&cfg)?;
    let out = cli
        .out
        .or_else(|| std::env::var_os("SUBTUNE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    log::info!("run directory {}, config hash {}", out.display(), &hash[..12]);
    let ctx = Ctx { ws: Workspace { out, hash, force: cli.force }, cfg };

    match cli.command {
        Command::GenTasks => commands::gen_tasks(&ctx),
        Command::TrainPt => commands::train_pt(&ctx),
        Command::TrainFt => commands::train_ft(&ctx),
        Command::Msf => commands::msf(&ctx),
        Command::Ist => commands::ist(&ctx),
        Command::IptInit => commands::ipt_init(&ctx),
        Command::Challenge { kind } => commands::challenge(&ctx, &kind),
        Command::Sweep { kind } => commands::sweep(&ctx, &kind),
        Command::Stability { methods, partition } => {
            commands::stability(&ctx, &methods, &partition)
        }
        Command::Pca => commands::pca(&ctx),
        Command::Report { allow_mixed } => commands::report(&ctx, allow_mixed),
    }
}
