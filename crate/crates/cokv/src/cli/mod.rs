//! The `cokv` command line: estimation with convergence monitoring, exact
//! verification, budget allocation, eviction runs, and mask experiments.
//!
//! Every command resolves its settings as CLI flag > `--config` JSON file >
//! built-in default, runs deterministically under a fixed seed with
//! `--workers 1`, and writes its artifacts plus a `manifest.json` under the
//! output directory.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
//! 3 convergence failure, 4 oracle failure, 5 verification failure.

mod commands;
mod config;

pub use commands::mask::{MaskExperimentReport, MaskRow};
pub use config::RunConfig;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::bridge::OracleError;
use crate::estimator::EstimateError;
use crate::evictor::EvictError;
use crate::game::GameError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other = 1,
    Config = 2,
    Convergence = 3,
    Oracle = 4,
    Verification = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Config, message: message.into() }
    }

    pub fn convergence(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Convergence, message: message.into() }
    }

    pub fn oracle(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Oracle, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Verification, message: message.into() }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Other, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        match &e {
            GameError::Evaluation { .. } | GameError::RangeViolation { .. } => {
                Self::oracle(e.to_string())
            }
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match &e {
            EstimateError::Coverage { .. } => Self::convergence(e.to_string()),
            EstimateError::Game(inner) => match inner {
                GameError::Evaluation { .. } | GameError::RangeViolation { .. } => {
                    Self::oracle(e.to_string())
                }
                _ => Self::config(e.to_string()),
            },
            EstimateError::Io { .. } => Self::other(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match &e {
            OracleError::Config(_) | OracleError::InvalidRequest(_) => Self::config(e.to_string()),
            _ => Self::oracle(e.to_string()),
        }
    }
}

impl From<EvictError> for CliError {
    fn from(e: EvictError) -> Self {
        match &e {
            EvictError::Io { .. } => Self::other(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::config(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cokv",
    version,
    about = "Cooperative-game head scoring, cache budget allocation, and token eviction"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; explicit flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Sampling worker threads (1 = bitwise-reproducible outputs).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate sliced Shapley values with the two-run stopping rule.
    Estimate {
        /// Game spec JSON file (any family, including "external").
        #[arg(long)]
        game: Option<PathBuf>,
        /// Comma-separated coalition sizes, e.g. "32,64,96,128".
        #[arg(long)]
        slices: Option<String>,
        /// Total sample cap per run.
        #[arg(long)]
        samples: Option<u64>,
        /// Slice scheduling: round-robin (default) or iid.
        #[arg(long)]
        schedule: Option<String>,
        /// Credit complements at their mirrored slice size.
        #[arg(long)]
        mirror_credit: bool,
        /// Continue from table_a.bin / table_b.bin in the output directory.
        #[arg(long)]
        resume: bool,
        /// Samples between convergence checks (default max(100, cap/50)).
        #[arg(long)]
        checkpoint: Option<u64>,
    },
    /// Brute-force equivalence, efficiency, symmetry, and slice-consistency
    /// checks on seeded random games.
    Verify {
        /// Player count (at most 10).
        #[arg(long)]
        n: Option<usize>,
        /// Number of random games.
        #[arg(long)]
        games: Option<usize>,
    },
    /// Turn scores into per-head cache budgets.
    Allocate {
        /// Scores CSV (player_index,label,ssv), e.g. an estimate export.
        #[arg(long)]
        scores: PathBuf,
        /// Heads forced to window-only caches.
        #[arg(long)]
        alpha: Option<usize>,
        /// Comma-separated alpha values; one plan per value.
        #[arg(long)]
        alpha_sweep: Option<String>,
        /// Shared budget B in KV pairs.
        #[arg(long)]
        budget: Option<u64>,
        /// Local window size s in KV pairs.
        #[arg(long)]
        window: Option<u64>,
    },
    /// Apply an allocation plan to head tensor files.
    Evict {
        /// Allocation plan JSON from `allocate`.
        #[arg(long)]
        plan: PathBuf,
        /// Head tensor files; file i maps to plan head i unless --head is set.
        #[arg(long = "tensor", required = true)]
        tensors: Vec<PathBuf>,
        /// Plan head index for a single tensor file.
        #[arg(long)]
        head: Option<usize>,
        /// Pooling kernel (odd; default 7).
        #[arg(long)]
        kernel: Option<usize>,
    },
    /// Mask the top-/low-ranked players and record the utility per k.
    MaskExperiment {
        /// Game spec JSON file.
        #[arg(long)]
        game: Option<PathBuf>,
        /// Scores CSV covering every player.
        #[arg(long)]
        scores: PathBuf,
        /// Comma-separated k values.
        #[arg(long)]
        ks: Option<String>,
    },
    /// Recompute the two-run MAE from saved contribution tables.
    ConvergenceReport {
        #[arg(long)]
        table_a: PathBuf,
        #[arg(long)]
        table_b: PathBuf,
    },
}

/// Parse argv, run, and map errors to exit codes.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.kind as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(workers) = cli.workers {
        cfg.workers = Some(workers);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }

    match cli.command {
        Command::Estimate {
            game,
            slices,
            samples,
            schedule,
            mirror_credit,
            resume,
            checkpoint,
        } => commands::estimate::run(
            cfg,
            commands::estimate::Flags {
                game,
                slices,
                samples,
                schedule,
                mirror_credit,
                resume,
                checkpoint,
            },
        ),
        Command::Verify { n, games } => commands::verify::run(cfg, n, games),
        Command::Allocate { scores, alpha, alpha_sweep, budget, window } => {
            commands::allocate::run(cfg, scores, alpha, alpha_sweep, budget, window)
        }
        Command::Evict { plan, tensors, head, kernel } => {
            commands::evict::run(cfg, plan, tensors, head, kernel)
        }
        Command::MaskExperiment { game, scores, ks } => {
            commands::mask::run(cfg, game, scores, ks)
        }
        Command::ConvergenceReport { table_a, table_b } => {
            commands::report::run(cfg, table_a, table_b)
        }
    }
}
