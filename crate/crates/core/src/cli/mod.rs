//! Command-line front end: configuration files, study dispatch, artifacts.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! failure (CFL or nonlinear solve), 4 verification violations found.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::solver::SolverError;
use crate::verify::VerifyError;

pub mod config;
pub mod output;
pub mod studies;

pub use config::{InitialData, ProblemTemplate, RunConfig, StudyKind};
pub use output::{emit_csv, emit_plot, Artifact, Table};
pub use studies::{
    convergence_study, evaluate_oracle, run_config, ConvergenceRow, ConvergenceTable, RunOptions,
    RunRecord,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("nothing to emit for {0}")]
    EmptyArtifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } | CliError::EmptyArtifact(_) => 1,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InitialLength { .. }
            | SolverError::InitialNonFinite(_)
            | SolverError::InitialBoundary { .. }
            | SolverError::Operator(_)
            | SolverError::Geometry(_)
            | SolverError::Frac(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Solver(s) => s.into(),
            VerifyError::GridMismatch => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fracvisc",
    version,
    about = "Time-fractional viscosity-solution solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory (overrides output.directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized families and data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the configured problem.
    Solve { config: PathBuf },
    /// Error table under doubling refinement.
    Convergence { config: PathBuf },
    /// Viscosity residual, barrier and alpha-limit checks.
    Verify { config: PathBuf },
    /// Comparison principle on randomized ordered data.
    Compare { config: PathBuf },
    /// Sup/inf-convolution checks on the final-time slice.
    Envelope { config: PathBuf },
    /// Evaluate a reference value, e.g. `oracle mittag-leffler 0.5 -1`.
    Oracle {
        name: String,
        #[arg(allow_negative_numbers = true)]
        params: Vec<f64>,
    },
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let opts = RunOptions {
        out: cli.out.clone(),
        seed: cli.seed,
    };
    let (path, kind) = match &cli.command {
        Command::Oracle { name, params } => {
            return match evaluate_oracle(name, params) {
                Ok(v) => {
                    println!(
                        "{}",
                        serde_json::json!({ "name": name, "params": params, "value": v })
                    );
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            };
        }
        Command::Solve { config } => (config, StudyKind::Solve),
        Command::Convergence { config } => (config, StudyKind::Convergence),
        Command::Verify { config } => (config, StudyKind::Verify),
        Command::Compare { config } => (config, StudyKind::Compare),
        Command::Envelope { config } => (config, StudyKind::Envelope),
    };
    match studies::run_config_as(path, Some(kind), &opts) {
        Ok(record) => {
            for line in &record.summary {
                println!("{line}");
            }
            for a in &record.artifacts {
                println!("wrote {}", a.display());
            }
            if record.violations > 0 {
                eprintln!("{} verification violation(s) found", record.violations);
                4
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
