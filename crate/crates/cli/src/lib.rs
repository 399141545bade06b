//! Command-line front end: configuration, subcommands and report writers.

pub mod commands;
pub mod config;
pub mod report;

use clap::{Parser, Subcommand};
use collective::ErrorKind;

use config::{Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("output: {0}")]
    Output(String),
    #[error("{stage}: {source}")]
    Module {
        stage: &'static str,
        source: collective::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Input(_) | CliError::Output(_) => EXIT_INPUT,
            CliError::Module { source, .. } => match source.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Numerical => EXIT_NUMERICAL,
                ErrorKind::Config => EXIT_CONFIG,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "collective", version, about = "Collective household model estimation and tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate a panel, summarize it and log rejected records.
    Ingest,
    /// Draw a synthetic panel from a scenario.
    Simulate,
    /// Principal components of the personality measures and the factors built on them.
    Pca,
    /// Fit the unconditional, conditional and polynomial demand systems.
    Estimate,
    /// Bootstrap test of proportional factor effects.
    TestProp,
    /// Bootstrap test that the retained factor drops out of the conditional system.
    TestCond,
    /// RICEB inequality by female personality fraction.
    Inequality,
    /// Mean trait scores by sex and age.
    Stability,
    /// Everything above on one sample.
    Pipeline,
}

impl Command {
    pub fn run(self, config: &RunConfig) -> Result<(), CliError> {
        match self {
            Command::Ingest => commands::ingest(config),
            Command::Simulate => commands::simulate(config),
            Command::Pca => commands::pca(config),
            Command::Estimate => commands::estimate(config),
            Command::TestProp => commands::test_prop(config),
            Command::TestCond => commands::test_cond(config),
            Command::Inequality => commands::inequality(config),
            Command::Stability => commands::stability(config),
            Command::Pipeline => commands::pipeline(config),
        }
    }
}

/// Resolve the config, size the worker pool and run; returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let result = RunConfig::resolve(&cli.overrides).and_then(|config| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
        pool.install(|| cli.command.run(&config))
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
