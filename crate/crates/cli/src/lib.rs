//! Command-line front end for the `lossnet` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Output;

#[derive(Debug, Parser)]
#[command(name = "lossnet", version, about = "Mean-field loss-network experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Equilibria table, h-curve and potential grid.
    Equilibria,
    /// Mean-field trajectory.
    Ode,
    /// Rate function at (y, z) pairs read from CSV.
    Rate,
    /// Minimal action between two points.
    Action,
    /// Quasipotential matrix and tree-formula weights.
    Tree,
    /// One simulated path of the n-node chain.
    Simulate,
    /// Exit times from a neighbourhood of an equilibrium.
    ExitTimes,
    /// Empirical invariant measure.
    Invariant,
    /// Equilibria, quasipotentials, J and U in one run.
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Equilibria => "equilibria",
            Self::Ode => "ode",
            Self::Rate => "rate",
            Self::Action => "action",
            Self::Tree => "tree",
            Self::Simulate => "simulate",
            Self::ExitTimes => "exit-times",
            Self::Invariant => "invariant",
            Self::Pipeline => "pipeline",
        }
    }
}

/// Runs one command and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let ctx = Context::new(cfg, cli.command.name())?;
    let mut out = Output::new(&cli.out);
    let censored_only = match cli.command {
        Command::Equilibria => commands::equilibria(&ctx, &mut out).map(|_| false),
        Command::Ode => commands::ode(&ctx, &mut out).map(|_| false),
        Command::Rate => commands::rate(&ctx, &mut out).map(|_| false),
        Command::Action => commands::action(&ctx, &mut out).map(|_| false),
        Command::Tree => commands::tree(&ctx, &mut out).map(|_| false),
        Command::Simulate => commands::simulate_cmd(&ctx, &mut out).map(|_| false),
        Command::ExitTimes => commands::exit_times_cmd(&ctx, &mut out),
        Command::Invariant => commands::invariant(&ctx, &mut out).map(|_| false),
        Command::Pipeline => commands::pipeline(&ctx, &mut out).map(|_| false),
    }?;
    let written = out.commit()?;
    if censored_only {
        return Err(CliError::CensoredOnly);
    }
    Ok(written)
}
