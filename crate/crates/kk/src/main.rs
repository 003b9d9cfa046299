use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kk::{run_experiment, ExperimentConfig, KkError, Pool, Task};

/// Heat-kernel experiments for kinetic diffusions.
#[derive(Parser)]
#[command(name = "kk", version)]
struct Cli {
    task: Task,
    /// Experiment config (JSON), or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "kk-out")]
    out: PathBuf,
}

fn run(cli: &Cli) -> Result<(), KkError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| KkError::validation("config", format!("{}: {e}", cli.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let pool = Pool::from_env()?;
    let out = run_experiment(cli.task, &cfg, &cli.out, &pool)?;
    println!("{}", out.manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kk {}: {e}", cli.task.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
