//! `dctnn` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

mod args;
mod commands;
mod manifest;

use args::{Cli, Command};
use clap::Parser;
use dctnn_core::conformal::ConformalError;
use dctnn_core::decomp::DecompError;
use dctnn_core::network::NetworkError;
use dctnn_core::pipeline::PipelineError;
use dctnn_core::selector::SelectorError;
use dctnn_core::simgen::SimError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadConfig(_) => CliError::Config(e.to_string()),
            SimError::AcceptanceBudget { .. } => CliError::Numeric(e.to_string()),
            SimError::Net(inner) => CliError::from(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        match e {
            DecompError::TooFewSamples(_) | DecompError::RankExceedsDim { .. } => {
                CliError::Config(e.to_string())
            }
            DecompError::GramIllConditioned { .. }
            | DecompError::DegenerateComponent(_)
            | DecompError::Linalg(_) => CliError::Numeric(e.to_string()),
            DecompError::Tensor(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::NanLoss { .. } => CliError::Numeric(e.to_string()),
            NetworkError::Decomp(inner) => CliError::from(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Decomp(inner) => CliError::from(inner),
            PipelineError::Net(inner) => CliError::from(inner),
        }
    }
}

impl From<ConformalError> for CliError {
    fn from(e: ConformalError) -> Self {
        match e {
            ConformalError::Pipeline(inner) => CliError::from(inner),
            ConformalError::Sim(inner) => CliError::from(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SelectorError> for CliError {
    fn from(e: SelectorError) -> Self {
        match e {
            SelectorError::Conformal(inner) => CliError::from(inner),
            SelectorError::Pipeline(inner) => CliError::from(inner),
            SelectorError::Sim(inner) => CliError::from(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Uq(a) => commands::cmd_uq(a),
        Command::Select(a) => commands::cmd_select(a),
        Command::Coverage(a) => commands::cmd_coverage(a),
        Command::Inspect(a) => commands::cmd_inspect(a),
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_default_env()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .init();

    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("thread pool already configured: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 0 {
        log::warn!("built without the parallel feature; --threads is ignored");
    }

    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
