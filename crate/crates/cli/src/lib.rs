//! Command-line driver for gradient lexicase selection experiments.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for configuration and
//! usage errors.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::CliResult;

#[derive(Parser, Debug)]
#[command(name = "gradlex", version, about = "Gradient lexicase selection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// Experiment file (`key = value` lines)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured replicates
    #[arg(long, global = true)]
    pub seed: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// sgd-baseline, random, tournament or lexicase
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    #[arg(long, global = true)]
    pub population: Option<String>,
    /// none, reset or inherit
    #[arg(long, global = true)]
    pub momentum_policy: Option<String>,
    /// modified or original
    #[arg(long, global = true)]
    pub selection_mode: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        [
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("out", &self.out),
            ("strategy", &self.strategy),
            ("population", &self.population),
            ("momentum_policy", &self.momentum_policy),
            ("selection_mode", &self.selection_mode),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one run and evaluate it on the test split
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run of this config
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run every configured strategy over the replicate seeds
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured strategy at several population sizes
    SweepPop {
        #[command(flatten)]
        common: Common,
        /// Comma-separated population sizes (default from config: 2,4,6,8)
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Channel-wise activation profiles of one or two checkpoints
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Layer index; defaults to the final convolutional block
        #[arg(long)]
        layer: Option<usize>,
        /// Number of leading test samples (default 100)
        #[arg(long)]
        samples: Option<String>,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let spec = commands::load_spec(common.config.as_deref(), &common.overrides())?;
            commands::cmd_train(&spec, resume.as_deref())
        }
        Command::Compare { common } => {
            let spec = commands::load_spec(common.config.as_deref(), &common.overrides())?;
            commands::cmd_compare(&spec).map(|_| ())
        }
        Command::SweepPop { common, sizes } => {
            let mut overrides = common.overrides();
            overrides.extend(sizes.map(|s| ("sizes", s)));
            let spec = commands::load_spec(common.config.as_deref(), &overrides)?;
            commands::cmd_sweep(&spec).map(|_| ())
        }
        Command::Profile {
            common,
            checkpoints,
            layer,
            samples,
        } => {
            let mut overrides = common.overrides();
            overrides.extend(samples.map(|s| ("profile_samples", s)));
            let spec = commands::load_spec(common.config.as_deref(), &overrides)?;
            commands::cmd_profile(&spec, &checkpoints, layer)
        }
        Command::Eval { common, checkpoint } => {
            let spec = commands::load_spec(common.config.as_deref(), &common.overrides())?;
            commands::cmd_eval(&spec, &checkpoint).map(|_| ())
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

