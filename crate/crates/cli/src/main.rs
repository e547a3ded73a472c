//! Experiment driver for the Poissonized mixture learner.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when the
//! model itself fails (for example a truncation overflow during sampling).

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::ExperimentConfig;
use error::CliError;
use output::{write_summary, RunContext};

#[derive(Debug, Parser)]
#[command(name = "poissonize", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("POISSONIZE_GIT_HASH"), ")"))]
#[command(about = "Seeded experiments for learning Gaussian mixtures through Poissonized ICA")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of trials; overrides the config.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Learn mixture means end to end from Poissonized samples.
    Learn,
    /// Perturbed Khatri–Rao conditioning experiments.
    Smoothed,
    /// Build and measure nearly indistinguishable mixture pairs.
    Hardness,
    /// Benchmark the ICA solver on random mixing matrices.
    IcaBench,
    /// Check the truncation formula and threshold schedule.
    ReductionCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Learn => "learn",
            Command::Smoothed => "smoothed",
            Command::Hardness => "hardness",
            Command::IcaBench => "ica-bench",
            Command::ReductionCheck => "reduction-check",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            Command::Learn => 10,
            Command::Smoothed => 50,
            Command::Hardness => 10,
            Command::IcaBench => 20,
            Command::ReductionCheck => 1,
        }
    }
}

fn echo<T: Serialize>(ctx: &mut RunContext, block: &T) {
    let mut map = serde_json::Map::new();
    map.insert("seed".into(), ctx.seed.into());
    map.insert("out".into(), ctx.out_dir.display().to_string().into());
    map.insert("trials".into(), ctx.trials.into());
    map.insert(ctx.command.into(), serde_json::to_value(block).expect("config serializes"));
    ctx.config = serde_json::Value::Object(map);
}

fn run(cli: Cli) -> Result<(PathBuf, Option<String>), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config <file> is required".into()))?;
    let cfg = ExperimentConfig::load(&path)?;
    let command = cli.command;
    let trials = cli.trials.or(cfg.trials).unwrap_or(command.default_trials());
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let out_dir = cli
        .out
        .or(cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(command.name()));
    std::fs::create_dir_all(&out_dir)?;
    let mut ctx = RunContext {
        command: command.name(),
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        trials,
        out_dir,
        config: serde_json::Value::Null,
    };
    let start = Instant::now();
    let outcome = match command {
        Command::Learn => {
            let block = cfg.learn.unwrap_or_default();
            echo(&mut ctx, &block);
            commands::learn::run(&ctx, &block)?
        }
        Command::Smoothed => {
            let block = cfg.smoothed.unwrap_or_default();
            echo(&mut ctx, &block);
            commands::smoothed::run(&ctx, &block)?
        }
        Command::Hardness => {
            let block = cfg.hardness.unwrap_or_default();
            echo(&mut ctx, &block);
            commands::hardness::run(&ctx, &block)?
        }
        Command::IcaBench => {
            let block = cfg.ica_bench.unwrap_or_default();
            echo(&mut ctx, &block);
            commands::ica_bench::run(&ctx, &block)?
        }
        Command::ReductionCheck => {
            let block = cfg.reduction_check.unwrap_or_default();
            echo(&mut ctx, &block);
            commands::reduction_check::run(&ctx, &block)?
        }
    };
    let summary = write_summary(&ctx, &outcome, start.elapsed().as_secs_f64())?;
    Ok((summary, outcome.model_failure))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok((summary, None)) => {
            println!("{}", summary.display());
            ExitCode::SUCCESS
        }
        Ok((summary, Some(failure))) => {
            println!("{}", summary.display());
            eprintln!("model failure: {failure}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
