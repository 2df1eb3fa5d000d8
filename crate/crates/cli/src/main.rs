//! `scpm`: ingest, synthesize, train, evaluate and gradient-check
//! treatment-effect rankers.

mod eval;
mod gradcheck;
mod ingest;
mod manifest;
mod synth;
mod train;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status for usage and input errors.
const EXIT_USAGE: u8 = 2;
/// Exit status for internal failures and failed checks.
const EXIT_FAILURE: u8 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl From<scpm::Error> for CliError {
    fn from(e: scpm::Error) -> Self {
        match e {
            scpm::Error::NumericDomain { .. } | scpm::Error::Diverged { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Scpm,
    Drm,
    Constrained,
    Duality,
}

impl ModelKind {
    pub fn core(self) -> scpm::learners::ModelKind {
        match self {
            ModelKind::Scpm => scpm::learners::ModelKind::Scpm,
            ModelKind::Drm => scpm::learners::ModelKind::Drm,
            ModelKind::Constrained => scpm::learners::ModelKind::Constrained,
            ModelKind::Duality => scpm::learners::ModelKind::Duality,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.core().as_str()
    }
}

#[derive(Debug, Parser)]
#[command(name = "scpm", version, about = "Rank subjects by aggregated heterogeneous treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a raw CSV through a schema into a processed data directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Schema file, or `census` / `covtype` for a builtin recipe.
        #[arg(long)]
        schema: String,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the 3/1/1 split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic data directory with ground-truth effects.
    Synth {
        /// Preset: planted, confounded, ponpare-like, null or constant.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the preset's row count.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split of a data directory.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        /// `key = value` training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seed sweep.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Selection share for the constrained model.
        #[arg(long, conflicts_with = "budget")]
        percentage: Option<f64>,
        /// Cost budget for the constrained model.
        #[arg(long)]
        budget: Option<f64>,
        /// Comma-separated multipliers searched by the duality model.
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split with a checkpoint and report ranking metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `all` or a comma-separated subset of auuc, auqc, krcc, lift, aucc.
        #[arg(long, default_value = "all")]
        metrics: String,
        /// Also score a seeded random ranking as a baseline.
        #[arg(long)]
        random: bool,
        #[arg(long, value_enum, default_value_t = eval::SplitName::Test)]
        split: eval::SplitName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of a model's objective.
    Gradcheck {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        rows: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weight outcomes by a logistic propensity fitted on the data.
        #[arg(long)]
        weighted: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { input, schema, out, seed } => ingest::run(&input, &schema, &out, seed),
        Command::Synth { spec, seed, rows, out } => synth::run(&spec, seed, rows, &out),
        Command::Train {
            model,
            data,
            config,
            seed,
            seeds,
            percentage,
            budget,
            lambda_grid,
            out,
        } => train::run(train::TrainArgs {
            model,
            data,
            config,
            seeds: seeds.unwrap_or_else(|| vec![seed.unwrap_or(0)]),
            percentage,
            budget,
            lambda_grid,
            out,
        }),
        Command::Eval {
            checkpoint,
            data,
            metrics,
            random,
            split,
            seed,
            out,
        } => eval::run(eval::EvalArgs {
            checkpoint,
            data,
            metrics,
            random,
            split,
            seed,
            out,
        }),
        Command::Gradcheck {
            model,
            data,
            rows,
            tolerance,
            seed,
            weighted,
        } => gradcheck::run(gradcheck::GradcheckArgs {
            model,
            data,
            rows,
            tolerance,
            seed,
            weighted,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
