//! `coxfilter` command-line front end: simulate data, run filters, benchmark
//! likelihood estimators, calibrate with PMMH and tabulate the
//! negative-estimate bounds.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "coxfilter", version, about = "Particle filtering and calibration for diffusions observed through a marked Cox process")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config. Defaults to 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the filters. Changes wall time only.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset (and its truth file) by thinning.
    Simulate,
    /// Run a particle filter on a dataset.
    Filter {
        #[arg(long)]
        data: PathBuf,
    },
    /// Relative MSE of likelihood estimates over a (Δ, N) or (Δ, budget) grid.
    LikelihoodBench {
        /// Dataset; defaults to the observations inlined in `[bench]`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Particle marginal Metropolis–Hastings.
    Pmmh {
        #[arg(long)]
        data: PathBuf,
    },
    /// Tabulate negative-estimate bounds.
    Bounds,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let config = match (&cli.config, &cli.command) {
        (Some(path), _) => Config::load(path)?,
        (None, Command::Bounds) => Config::default(),
        (None, _) => return Err(CliError::config("--config is required for this command")),
    };
    let ctx = Context {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        config,
        out_dir: cli.out_dir,
    };
    match &cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Filter { data } => commands::filter(&ctx, data),
        Command::LikelihoodBench { data } => commands::likelihood_bench(&ctx, data.as_deref()),
        Command::Pmmh { data } => commands::pmmh(&ctx, data),
        Command::Bounds => commands::bounds(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
