use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use crust_replay::cli::{self, ExperimentConfig, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "crust-replay", version, about = "Noise-tolerant coreset replay experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, noise level, seed) cell of a config.
    Run {
        config: PathBuf,
        /// Parallel runs; overrides the config's `workers`.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Overrides the config's `output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Rebuild aggregate.csv and summary.txt from stored run records.
    Summarize { dir: PathBuf },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Small synthetic experiment that finishes in well under a minute.
    Demo {
        #[arg(long, default_value = "demo-out")]
        output_dir: PathBuf,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
}

fn execute(cfg: &ExperimentConfig, workers: Option<usize>) -> anyhow::Result<bool> {
    let workers = cli::resolve_workers(workers, cfg);
    let outcome = cli::run_experiment(cfg, workers)?;
    print!("{}", outcome.summary);
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.cell, f.error);
    }
    println!("results written to {}", cfg.output_dir.display());
    Ok(outcome.failures.is_empty())
}

fn real_main() -> anyhow::Result<bool> {
    let args = Args::parse();
    match args.command {
        Command::Run {
            config,
            workers,
            output_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            execute(&cfg, workers)
        }
        Command::Summarize { dir } => {
            print!("{}", cli::summarize(&dir)?);
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            println!("{}: ok, {} runs", config.display(), cfg.cells().len());
            Ok(true)
        }
        Command::Demo { output_dir, workers } => execute(&cli::demo_config(output_dir), workers),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
