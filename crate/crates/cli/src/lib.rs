//! Driver for the experiment families: configuration, subcommands and
//! artifact writing. The binary in `main.rs` is a thin wrapper.

pub mod commands;
pub mod config;
pub mod error;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use config::{Overrides, RunConfig, THREADS_ENV};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "percodrift", version, about = "Biased random walks on percolation clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (falls back to PERCODRIFT_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Exact-identity checks with a JSON report of residuals.
    IdentitySuite,
    /// Derivative of the speed at p = 1 and all its ingredients.
    Expansion,
    /// Speed estimates over an ε-grid and the weighted slope fit.
    SpeedSweep,
    /// Kalikow environment: exhaustive identity, Monte Carlo row, δ-ratios.
    KalikowCheck,
    /// Survival tables and tail fits of the trap statistics.
    TrapTails,
}

/// Load, override and validate a configuration.
pub fn resolve(cli: &Cli, env_threads: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let o = Overrides { seed: cli.seed, out: cli.out.clone(), threads: cli.threads };
    cfg.apply(&o, env_threads)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::IdentitySuite => commands::cmd_identity_suite(cfg),
        Command::Expansion => commands::cmd_expansion(cfg),
        Command::SpeedSweep => commands::cmd_speed_sweep(cfg),
        Command::KalikowCheck => commands::cmd_kalikow_check(cfg),
        Command::TrapTails => commands::cmd_trap_tails(cfg),
    })
}

/// Parse-free entry point used by `main`: returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let env = std::env::var(THREADS_ENV).ok();
    let result = resolve(cli, env.as_deref()).and_then(|cfg| dispatch(cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("percodrift: {e}");
            e.exit_code()
        }
    }
}
