//! `pqla` — command-line frontend for the estimation library.
//!
//! Four subcommands: `simulate` (one dataset to CSV), `estimate` (one
//! fit from a dataset file), `study` (replicated Monte Carlo study),
//! `diagnose` (regularity and asymptotics checks). Exit codes: 0
//! success, 2 configuration/usage, 3 simulation or data problems, 4
//! estimation non-convergence (the result file is still written), 5
//! internal failures.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pqla_core::{Error, Method};

#[derive(Parser)]
#[command(
    name = "pqla",
    version,
    about = "Sparse volatility estimation: simulation, fitting, studies, diagnostics"
)]
struct Cli {
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one dataset and write it as CSV.
    Simulate {
        /// TOML configuration file.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Simulation seed; defaults to the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Observation count; defaults to the first grid entry.
        #[arg(long)]
        n: Option<usize>,
        /// Output file; defaults to <output.dir>/dataset_n<n>_seed<seed>.csv.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Fit one estimator to a dataset file and write the result as JSON.
    Estimate {
        /// TOML configuration file.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Dataset CSV produced by `simulate` (or matching its layout).
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Estimator to run.
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Iteration cap for the outer solver loop (MCMC length for qbe).
        #[arg(long)]
        max_iter: Option<usize>,
        /// Output file; defaults to <output.dir>/estimate_<method>.json.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the replicated study from the config and write report files.
    Study {
        /// TOML configuration file.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Worker threads (overrides PQLA_WORKERS and the config; 0 = auto).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; defaults to output.dir from the config.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Run one diagnostic and write its report files.
    Diagnose {
        /// TOML configuration file.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Which diagnostic to run.
        #[arg(long, value_enum)]
        check: CheckArg,
        /// Output directory; defaults to output.dir from the config.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum MethodArg {
    /// Unpenalized quasi maximum likelihood.
    Qmle,
    /// Penalized quasi likelihood (sparse).
    Pql,
    /// Quasi Bayesian posterior mean.
    Qbe,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::Qmle => Method::Qmle,
            MethodArg::Pql => Method::Penalized,
            MethodArg::Qbe => Method::Qbe,
        }
    }
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum CheckArg {
    /// Tail probabilities of the normalized random field (p <= 3 only).
    Pldi,
    /// Local quadratic decomposition remainder probes.
    Laq,
    /// Normalized error moments across the study grid.
    Moments,
    /// Identifiability index of the limit contrast.
    Chi0,
    /// Penalty regularity conditions A2..A6, A11.
    Conditions,
}

/// Maps library errors to the documented exit codes.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Configuration(_) | Error::Argument(_) => 2,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::SimulationDiverged { .. }
        | Error::Domain(_)
        | Error::NotIdentifiable(_)
        | Error::Io(_) => 3,
        Error::Optimization(_) | Error::Evaluation { .. } | Error::Study { .. } => 5,
    }
}

fn run(cli: Cli) -> pqla_core::Result<u8> {
    let quiet = cli.quiet;
    match cli.cmd {
        Cmd::Simulate {
            config,
            seed,
            n,
            out,
        } => commands::cmd_simulate(&config, seed, n, out, quiet),
        Cmd::Estimate {
            config,
            data,
            method,
            max_iter,
            out,
        } => commands::cmd_estimate(&config, &data, method.method(), max_iter, out, quiet),
        Cmd::Study {
            config,
            workers,
            out_dir,
        } => commands::cmd_study(&config, workers, out_dir, quiet),
        Cmd::Diagnose {
            config,
            check,
            out_dir,
        } => commands::cmd_diagnose(&config, check, out_dir, quiet),
    }
}

fn main() -> ExitCode {
    // Clap itself exits with code 2 on usage errors (unknown flags,
    // invalid enum values), matching the configuration/usage lane.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
