//! `region-sched`: runs oracle simulations, ablation sweeps and trace replays
//! from a JSON config.

mod ablate;
mod config;
mod error;
mod replay;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

const THREADS_ENV: &str = "REGION_SCHED_THREADS";

#[derive(Parser)]
#[command(name = "region-sched", version, about = "Region-adaptive sparse sampling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampling method and compare it against the full-grid reference.
    Run(Common),
    /// Sweep partitioners, scorers or ratio and dilation; one CSV per sweep.
    Ablate(Common),
    /// Re-run the scheduler over a recorded trace.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Trace directory holding `trace.json`; overrides `trace_dir`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write segmentation, complexity and active-set maps for every sparse step.
    Maps(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply_overrides(self.out.clone(), self.seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| CliError::Config {
            field: THREADS_ENV.into(),
            message: format!("expected a thread count, got `{v}`"),
        }),
        Err(_) => Ok(flag),
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = thread_count(flag)? {
        // Zero lets the pool pick the core count.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config {
                field: "threads".into(),
                message: e.to_string(),
            })?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => {
            init_threads(c.threads)?;
            run::cmd_run(&c.load()?, false)
        }
        Command::Maps(c) => {
            init_threads(c.threads)?;
            run::cmd_run(&c.load()?, true)
        }
        Command::Ablate(c) => {
            init_threads(c.threads)?;
            ablate::cmd_ablate(&c.load()?)
        }
        Command::Replay { common, trace } => {
            init_threads(common.threads)?;
            replay::cmd_replay(&common.load()?, trace.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
