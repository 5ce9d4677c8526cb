//! Command-line front end: argument parsing, config resolution and the
//! subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{Overrides, RunConfig};
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "lapool", version, about = "Laplacian pooling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed applied to every config section.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created when missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Config override `dotted.key=value`; the value is parsed as JSON when
    /// possible. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Dataset directory (sets `dataset`).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Model checkpoint (sets `checkpoint`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Graph JSON file (sets `graph`).
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic motif dataset.
    GenData,
    /// Train a classifier; writes the checkpoint, history and metrics.
    Train,
    /// Evaluate a checkpoint on every split of a dataset.
    Eval,
    /// Pool one graph and export the result as JSON and DOT.
    Pool,
    /// Integrated-gradients attribution for one graph.
    Explain,
    /// 1-D energy preservation experiment.
    SignalDemo,
    /// Finite-difference check of every layer.
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Pool => "pool",
            Command::Explain => "explain",
            Command::SignalDemo => "signal-demo",
            Command::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    started: String,
    finished: String,
}

/// Resolves the config, runs the subcommand and writes
/// `resolved_config.json` and `run_meta.json` into the output directory.
/// Returns the human-readable summary.
pub fn run(cli: &Cli) -> Result<String> {
    let overrides = Overrides {
        sets: cli.sets.clone(),
        seed: cli.seed,
        dataset: cli.dataset.clone(),
        checkpoint: cli.checkpoint.clone(),
        graph: cli.graph.clone(),
    };
    let config = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let started = chrono::Utc::now().to_rfc3339();
    fs::write(out.join("resolved_config.json"), config.to_json()).map_err(|e| CliError::io(out, e))?;
    log::info!("{}: writing to {}", cli.command.name(), out.display());

    let summary = match cli.command {
        Command::GenData => commands::gen_data(&config, out),
        Command::Train => commands::train(&config, out),
        Command::Eval => commands::eval(&config, out),
        Command::Pool => commands::pool(&config, out),
        Command::Explain => commands::explain_cmd(&config, out),
        Command::SignalDemo => commands::signal_demo(&config, out),
        Command::Gradcheck => commands::gradcheck(&config, out),
    }?;

    let meta = RunMeta {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
    };
    let meta = serde_json::to_string_pretty(&meta)? + "\n";
    fs::write(out.join("run_meta.json"), meta).map_err(|e| CliError::io(out, e))?;
    Ok(summary)
}
