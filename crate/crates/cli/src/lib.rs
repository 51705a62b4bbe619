//! Configuration-driven front end: identity suites, single solves, HUM
//! synthesis, refinement sweeps and Carleman/observability reports, all
//! written as comma-separated tables plus a plain-text summary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;
pub use output::{ReportBundle, Table};

#[derive(Debug, Parser)]
#[command(name = "heatdbc", version, about = "Discrete heat equation with dynamic boundary conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (flat `key = value`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of every random input.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Mesh widths for `sweep`, e.g. `1/10,1/20,1/40`.
    #[arg(long, global = true)]
    pub levels: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Discrete identities, Gronwall case and weight probes.
    Check,
    /// Forward solve.
    Solve,
    /// Adjoint solve with duality and dissipativity checks.
    Adjoint,
    /// Penalized HUM control.
    Hum,
    /// Refinement sweep with coupled parameters.
    Sweep,
    /// Carleman term breakdown and observability quantities.
    Carleman,
}

/// Effective configuration: file (or defaults) with flag overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => commands::load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(levels) = &cli.levels {
        cfg.levels = config::parse_levels(levels)
            .ok_or_else(|| CliError::Usage(format!("--levels: `{levels}` is not a list of mesh widths")))?;
    }
    Ok(cfg)
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<ReportBundle, CliError> {
    match command {
        Command::Check => commands::check(cfg),
        Command::Solve => commands::solve(cfg),
        Command::Adjoint => commands::adjoint(cfg),
        Command::Hum => commands::hum(cfg),
        Command::Sweep => commands::sweep(cfg),
        Command::Carleman => commands::carleman(cfg),
    }
}

/// Run, write the bundle and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = effective_config(cli).and_then(|cfg| {
        let bundle = execute(cli.command, &cfg)?;
        bundle.write(&cfg.out_dir)?;
        Ok(bundle)
    });
    match outcome {
        Ok(bundle) => {
            print!("{}", bundle.summary_text());
            if bundle.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Numerical(heatdbc::Error::NotConverged { history, .. }) = &e {
                eprintln!("residual history: {history:?}");
            }
            e.exit_code()
        }
    }
}
