//! Command-line front end: solves, continuation sweeps, verification and
//! payoff decomposition, writing deterministic CSV and JSON artifacts.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "margnorm", version, about = "Minimal L^p densities with prescribed marginals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve at a single exponent.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continuation sweep over every configured exponent.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve, then run attainment, duality, minimality and oracle checks.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Shift Φ₁ by 0.1 before checking (negative control).
        #[arg(long)]
        corrupt: bool,
    },
    /// Decompose tabulated payoffs into bond, forward, puts and calls.
    Decompose {
        #[arg(long)]
        payoff: PathBuf,
        #[arg(long)]
        k0: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Failure classes, mapped onto exit codes 1, 2 and 3.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Convergence(String),
    Verification(Vec<String>),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Convergence(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e:#}"),
            Failure::Convergence(which) => write!(f, "did not converge: {which}"),
            Failure::Verification(checks) => write!(f, "verification failed: {}", checks.join("; ")),
        }
    }
}

fn load(config: &std::path::Path, out: &Option<PathBuf>) -> Result<config::Experiment, Failure> {
    ExperimentConfig::from_path(config)
        .and_then(|c| c.into_experiment(out.clone()))
        .map_err(Failure::Config)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { config, out } => commands::solve(&load(&config, &out)?),
        Command::Sweep { config, out } => commands::sweep(&load(&config, &out)?),
        Command::Verify { config, out, corrupt } => commands::verify(&load(&config, &out)?, corrupt),
        Command::Decompose { payoff, k0, out } => commands::decompose(&payoff, k0, &out),
    }
}
