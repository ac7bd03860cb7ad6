//! `tomo` — link delay tomography from end-to-end probe measurements.
//!
//! Subcommands: `simulate` (scenario → measurement CSV + truth JSON),
//! `estimate` (measurements + topology → fitted link mixtures), `reproduce`
//! (replication studies and plot data), `check` (identifiability report).

mod commands;
mod error;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "tomo", version, about = "Link delay tomography toolkit")]
struct Cli {
    /// Replication-level worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorKind {
    Cf,
    Wcf,
    Mle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BinStrategy {
    Equal,
    Varying,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum FigureId {
    Fig4,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
}

#[derive(Args)]
struct EstimatorOpts {
    /// Frequency points for the CF objective.
    #[arg(long, default_value_t = 3000)]
    k_frequencies: usize,
    /// Frequency points for the WCF objective (cubic cost).
    #[arg(long, default_value_t = 480)]
    wcf_frequencies: usize,
    /// Gaussian scale for frequency sampling (on normalized coordinates).
    #[arg(long, default_value_t = 5.0)]
    t_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario: write measurements.csv and truth.json.
    Simulate {
        /// Built-in scenario name (discrete4, exp4, expgamma4, weibull8) or
        /// a scenario JSON path.
        #[arg(long)]
        scenario: String,
        /// Override the scenario's sample count.
        #[arg(long)]
        n: Option<usize>,
        /// Replication index to materialize.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        /// Base seed (TOMO_SEED overrides).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Fit link delay distributions from a measurement CSV.
    Estimate {
        #[arg(long)]
        measurements: std::path::PathBuf,
        /// Topology JSON: {"root": id, "edges": [[p, c], ...], "leaves": [...]}.
        #[arg(long)]
        topology: std::path::PathBuf,
        #[arg(long, value_enum, default_value_t = EstimatorKind::Cf)]
        estimator: EstimatorKind,
        #[arg(long, value_enum, default_value_t = BinStrategy::Varying)]
        bins: BinStrategy,
        #[arg(long, default_value_t = 12)]
        n_bins: usize,
        /// Include a point mass at zero delay in the mixture.
        #[arg(long)]
        zero_atom: bool,
        /// Quantile-rebinning rounds for --bins varying.
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        /// Grid size for --estimator mle (default: inferred from the data).
        #[arg(long)]
        grid_states: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        opts: EstimatorOpts,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Re-run one of the built-in studies and emit tables and plot data.
    Reproduce {
        #[arg(long, value_enum)]
        figure: FigureId,
        /// Replication count (studies default to 20).
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Identifiability report for a topology.
    Check {
        #[arg(long)]
        topology: std::path::PathBuf,
    },
}

/// TOMO_SEED wins over --seed when both are present.
fn effective_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var("TOMO_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::config(format!("TOMO_SEED is not a u64: {text:?}"))),
        Err(_) => Ok(flag),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            scenario,
            n,
            rep,
            seed,
            out,
        } => effective_seed(seed)
            .and_then(|seed| commands::simulate(&scenario, n, rep, seed, &out)),
        Command::Estimate {
            measurements,
            topology,
            estimator,
            bins,
            n_bins,
            zero_atom,
            rounds,
            grid_states,
            seed,
            opts,
            out,
        } => effective_seed(seed).and_then(|seed| {
            commands::estimate(commands::EstimateArgs {
                measurements,
                topology,
                estimator,
                bins,
                n_bins,
                zero_atom,
                rounds,
                grid_states,
                seed,
                opts,
                out,
            })
        }),
        Command::Reproduce {
            figure,
            reps,
            seed,
            out,
        } => effective_seed(seed)
            .and_then(|seed| commands::reproduce(figure, reps, seed, cli.jobs, &out)),
        Command::Check { topology } => commands::check(&topology),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
