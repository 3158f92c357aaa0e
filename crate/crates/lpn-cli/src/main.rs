//! `lpn` — experiment driver for uncertainty-propagating probabilistic
//! networks: training, evaluation, relevance rankings, masking sweeps,
//! per-sample uncertainty-gap explanations, and a numerical self-check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lpn_cli::commands::{self, MethodFlag, SweepOrder};
use lpn_cli::config::FileConfig;
use lpn_cli::error::CliError;
use lpn_cli::selfcheck::{self, Fault};

#[derive(Parser)]
#[command(
    name = "lpn",
    version,
    about = "Probabilistic networks with input-uncertainty propagation and relevance analysis"
)]
struct Cli {
    /// TOML config file; omitted means built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Active dataset name (overrides the config file).
    #[arg(long, global = true)]
    dataset: Option<String>,

    /// Training seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for reports, parameters, and figures.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ensure the active dataset's file exists, generating a labeled
    /// surrogate when the genuine file is absent.
    Prep,
    /// Train on the active dataset and save parameters plus a report.
    Train {
        /// Train the deterministic baseline instead of the probabilistic
        /// network.
        #[arg(long)]
        deterministic: bool,
        /// Run 5-fold cross-validation (reports fold statistics; saves no
        /// parameter file).
        #[arg(long)]
        cv: bool,
    },
    /// Evaluate saved parameters on the held-out validation split.
    Evaluate {
        /// Parameters file produced by `train`.
        #[arg(long)]
        params: PathBuf,
    },
    /// Rank input features by relevance on the validation split.
    Relevance {
        /// Parameters file produced by `train`.
        #[arg(long)]
        params: PathBuf,
        /// Relevance method.
        #[arg(long, value_enum, default_value_t = MethodFlag::Lpn)]
        method: MethodFlag,
    },
    /// Cumulative feature-masking sweep ordered by a saved ranking.
    MaskSweep {
        /// Parameters file produced by `train`.
        #[arg(long)]
        params: PathBuf,
        /// Ranking report produced by `relevance`.
        #[arg(long)]
        ranking: PathBuf,
        /// Mask the most relevant features first (descending) or the
        /// least relevant first (ascending).
        #[arg(long, value_enum, default_value_t = SweepOrder::Ascending)]
        order: SweepOrder,
    },
    /// Per-feature uncertainty-gap explanations for validation samples.
    Gap {
        /// Parameters file produced by `train` (probabilistic only).
        #[arg(long)]
        params: PathBuf,
        /// Comma-separated validation sample indices.
        #[arg(long, default_value = "0,1,2")]
        samples: String,
    },
    /// Monte-Carlo and finite-difference verification of the numerical
    /// core; exits nonzero if any check fails.
    Selfcheck {
        /// Deliberately corrupt one checked quantity to prove the
        /// corresponding oracle catches it.
        #[arg(long, value_enum)]
        inject: Option<Fault>,
    },
}

fn parse_samples(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>().map_err(|_| {
                CliError::Config(format!("invalid sample id {s:?}: expected an unsigned integer"))
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = FileConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(cli.dataset.as_deref(), cli.seed);
    let out_dir = commands::ensure_out_dir(&cli.out)?;

    match cli.command {
        Command::Prep => commands::cmd_prep(&cfg, &out_dir),
        Command::Train { deterministic, cv } => {
            commands::cmd_train(&cfg, &out_dir, deterministic, cv)
        }
        Command::Evaluate { params } => commands::cmd_evaluate(&cfg, &out_dir, &params),
        Command::Relevance { params, method } => {
            commands::cmd_relevance(&cfg, &out_dir, &params, method)
        }
        Command::MaskSweep { params, ranking, order } => {
            commands::cmd_mask_sweep(&cfg, &out_dir, &params, &ranking, order)
        }
        Command::Gap { params, samples } => {
            let ids = parse_samples(&samples)?;
            commands::cmd_gap(&cfg, &out_dir, &params, &ids)
        }
        Command::Selfcheck { inject } => selfcheck::cmd_selfcheck(&cfg, &out_dir, inject),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
