//! `emoreward` command-line tool.
//!
//! Every subcommand writes its outputs and a `manifest.json` into the output
//! directory and prints a one-line count summary on standard error. Exit
//! status is 0 on success, 1 on a hard error and 2 when `--strict` is set and
//! some records were rejected or scored with an error.

mod commands;
mod io;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use emoreward::exec::Exec;
use emoreward::pipeline::PipelineConfig;

use commands::{BalanceKey, Counts, Run};

/// Prefix of environment variables that override configuration keys, e.g.
/// `EMOREWARD_REWARD__FORMAT_WEIGHT=0.3`.
pub const ENV_PREFIX: &str = "EMOREWARD_";

#[derive(Debug, Parser)]
#[command(
    name = "emoreward",
    version,
    about = "Emotion reward scoring, dataset refinement and evaluation"
)]
struct Cli {
    /// Pipeline configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with status 2 when any record is rejected or errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; defaults to the configured one, then `.`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map annotation labels from the source set to the target set.
    MapLabels { input: PathBuf },
    /// Fit category VAD centroids by repeated k-fold regression and assign
    /// them to anchors.
    FitVad {
        samples: PathBuf,
        /// Number of folds.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Synthesize VAD labels from comments with the lexicon.
    GenVad { input: PathBuf },
    /// Derive top-3 emotion rankings from distributions or selections.
    DeriveRankings { input: PathBuf },
    /// Keep a balanced subset of annotation records.
    Balance {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "dec")]
        by: BalanceKey,
    },
    /// Instantiate question-answer templates over annotation records.
    InstantiateQa { input: PathBuf },
    /// Score responses against ground truth.
    Score {
        responses: PathBuf,
        ground_truth: PathBuf,
        /// Normalize totals within consecutive groups of this size.
        #[arg(long)]
        group_size: Option<usize>,
    },
    /// Score benchmark predictions.
    Evaluate {
        predictions: PathBuf,
        ground_truth: PathBuf,
    },
    /// Run the policy-optimization simulator on a candidate pool.
    Simulate {
        pool: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Independent runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Responses sampled per step.
        #[arg(long)]
        group_size: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MapLabels { .. } => "map-labels",
            Command::FitVad { .. } => "fit-vad",
            Command::GenVad { .. } => "gen-vad",
            Command::DeriveRankings { .. } => "derive-rankings",
            Command::Balance { .. } => "balance",
            Command::InstantiateQa { .. } => "instantiate-qa",
            Command::Score { .. } => "score",
            Command::Evaluate { .. } => "evaluate",
            Command::Simulate { .. } => "simulate",
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let path = path.map(std::path::absolute).transpose()?;
    let path = path.as_deref();
    let config = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading `{}`", p.display()))?,
        None => {
            let mut c = PipelineConfig::default();
            c.resolve_paths(&std::env::current_dir()?);
            c
        }
    };
    let mut config = config.with_env_overrides(ENV_PREFIX, std::env::vars())?;
    if let Some(p) = path {
        config.resolve_paths(p.parent().unwrap_or(Path::new(".")));
    }
    config.validate()?;
    Ok(config)
}

fn executor(jobs: Option<usize>) -> Result<Exec> {
    match jobs {
        Some(0) => anyhow::bail!("--jobs must be at least 1"),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring worker threads")?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::default()),
    }
}

fn run(cli: Cli) -> Result<Counts> {
    let config = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(config.seed);
    let out = cli
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let run = Run {
        config,
        seed,
        exec: executor(cli.jobs)?,
        out,
    };
    match &cli.command {
        Command::MapLabels { input } => commands::map_labels(&run, input),
        Command::FitVad {
            samples,
            k,
            repeats,
        } => commands::fit_vad(&run, samples, *k, *repeats),
        Command::GenVad { input } => commands::gen_vad(&run, input),
        Command::DeriveRankings { input } => commands::derive_rankings(&run, input),
        Command::Balance { input, by } => commands::balance(&run, input, *by),
        Command::InstantiateQa { input } => commands::instantiate_qa(&run, input),
        Command::Score {
            responses,
            ground_truth,
            group_size,
        } => commands::score(&run, responses, ground_truth, *group_size),
        Command::Evaluate {
            predictions,
            ground_truth,
        } => commands::evaluate_cmd(&run, predictions, ground_truth),
        Command::Simulate {
            pool,
            steps,
            runs,
            group_size,
        } => commands::simulate(&run, pool, *steps, *runs, *group_size),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let strict = cli.strict;
    match run(cli) {
        Ok(c) => {
            eprintln!(
                "{name}: read {}, wrote {}, rejected {}, errors {}",
                c.read, c.written, c.rejected, c.item_errors
            );
            if strict && (c.rejected + c.item_errors > 0) {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("{name}: error: {e:#}");
            ExitCode::from(1)
        }
    }
}
