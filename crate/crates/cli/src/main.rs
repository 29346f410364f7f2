//! `mbsc`: spectral clustering from the command line.
//!
//! Subcommands:
//! - `cluster`: one full pipeline run (graph, solver, k-means, NMI), with
//!   labels, convergence trace and a JSON summary written to the output
//!   directory;
//! - `bench`: a sweep over methods and parameter grids with repetitions,
//!   emitting an accuracy-versus-FLOPs CSV and per-run JSON records;
//! - `variance-check`: Monte Carlo validation of the probe estimator's
//!   covariance against its closed form.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration error, 3 numeric
//! failure.

mod bench;
mod cluster;
mod config;
mod variance_check;

use clap::{Parser, Subcommand};

use config::{BenchArgs, ClusterArgs, VarianceArgs};

#[derive(Parser)]
#[command(name = "mbsc", version, about = "Spectral clustering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one clustering pipeline and write labels, trace, and summary.
    Cluster(ClusterArgs),
    /// Sweep methods and parameter grids, aggregating over repetitions.
    Bench(BenchArgs),
    /// Validate the stochastic-gradient covariance against its closed form.
    VarianceCheck(VarianceArgs),
}

/// A failure carrying its process exit code.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

/// Classifies core errors: anything the user can fix in the invocation is a
/// configuration error (2), the rest are numeric failures (3).
pub fn classify(err: mbsc_core::Error) -> Failure {
    use mbsc_core::Error::*;
    let code = match &err {
        InvalidConfig(_) | Parse { .. } | EmptyDataset | Io(_) | CorruptCache(_) => 2,
        ShapeMismatch { .. }
        | Asymmetric { .. }
        | DegenerateRank { .. }
        | ContractViolation(_)
        | IsolatedVertex { .. }
        | ZeroDistance
        | DuplicateCentroids { .. }
        | StepFailure { .. }
        | GuardExceeded { .. }
        | DegenerateLandmark { .. } => 3,
    };
    Failure {
        code,
        message: err.to_string(),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cluster(args) => cluster::run(args),
        Command::Bench(args) => bench::run(args),
        Command::VarianceCheck(args) => variance_check::run(args),
    };
    if let Err(failure) = result {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
