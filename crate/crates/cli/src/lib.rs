//! Command-line driver for adaptive CCA tracking, change detection and
//! benchmarks.
//!
//! Every command reads one JSON [`ExperimentConfig`], either from `--config`
//! or from a named preset, applies the `--seed`, `--trials` and `--out`
//! overrides and writes its results under the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, Preset};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mcca", version, about = "Adaptive CCA on generalized Stiefel manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track the canonical subspaces and score them against batch CCA.
    Track(CommonArgs),
    /// Calibrate a threshold and detect changes in the criterion stream.
    Detect(CommonArgs),
    /// Time adaptive steps against batch solves.
    Bench(CommonArgs),
    /// Write a synthetic stream and its change labels.
    Gen(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset: toy or bci.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Self::Track(a) | Self::Detect(a) | Self::Bench(a) | Self::Gen(a) => a,
        }
    }

    fn default_preset(&self) -> Preset {
        match self {
            Self::Track(_) | Self::Bench(_) => Preset::Toy,
            Self::Detect(_) | Self::Gen(_) => Preset::Bci,
        }
    }
}

/// Resolves the effective config of a command.
pub fn resolve_config(command: &Command) -> Result<ExperimentConfig, CliError> {
    let args = command.args();
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => Preset::parse(name)?.config(),
        (None, None) => command.default_preset().config(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    let cfg = resolve_config(command)?;
    match command {
        Command::Track(_) => commands::cmd_track(&cfg).map(drop),
        Command::Detect(_) => commands::cmd_detect(&cfg).map(drop),
        Command::Bench(_) => commands::cmd_bench(&cfg).map(drop),
        Command::Gen(_) => commands::cmd_gen(&cfg).map(drop),
    }
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 1 for usage or config errors, 2 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mcca: {e}");
            e.exit_code()
        }
    }
}
