//! `oedipus`: design, baseline generation, evaluation and self-test front end.

mod config;
mod pipeline;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible acceleration: {0}")]
    Infeasible(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<oedipus_core::Error> for CliError {
    fn from(e: oedipus_core::Error) -> Self {
        match e {
            oedipus_core::Error::InfeasibleDesign { .. } => CliError::Infeasible(e.to_string()),
            oedipus_core::Error::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "oedipus", version, about = "Oracle-CRB k-space sampling design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design sampling patterns for every configured mode and acceleration.
    Design { config: PathBuf },
    /// Generate uniform, CAIPI and Poisson-disc baseline patterns.
    Baseline { config: PathBuf },
    /// Reconstruct test phantoms from every pattern and write the NRMSE report.
    Evaluate { config: PathBuf },
    /// Run the built-in numerical cross-checks.
    Selftest {
        /// Perturb the wavelet filter to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt_wavelet: bool,
    },
}

fn init_threads() {
    if let Some(n) = std::env::var("OEDIPUS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Design { config } => pipeline::cmd_design(&RunConfig::load(&config)?),
        Command::Baseline { config } => pipeline::cmd_baseline(&RunConfig::load(&config)?),
        Command::Evaluate { config } => pipeline::cmd_evaluate(&RunConfig::load(&config)?),
        Command::Selftest { corrupt_wavelet } => selftest::run(corrupt_wavelet),
    }
}

fn main() -> ExitCode {
    init_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oedipus: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
