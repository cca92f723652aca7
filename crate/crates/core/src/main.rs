use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use zodmc::bench::{
    acceptance_study, run_experiment, score_error_study, write_acceptance_csv, write_score_error_csv,
    ExperimentConfig,
};
use zodmc::Error;

#[derive(Parser)]
#[command(name = "zodmc", version, about = "Zeroth-order diffusion Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured sampler at every budget and write curves.
    Run(Common),
    /// Score error against the closed form along the schedule grid.
    ScoreError(Common),
    /// Accepted proposals per grid time along sampler trajectories.
    Acceptance(Common),
    /// Parse and check a config without running anything.
    Validate {
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::UnsupportedTarget(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.name));
    cfg.validate()?;
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("{}: ok", config.display());
            Ok(0)
        }
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let outcome = run_experiment(&cfg, &out)?;
            for cell in &outcome.cells {
                info!("{} {}", cell.id, cell.status);
            }
            let failed = outcome.cells.iter().filter(|c| !c.ok()).count();
            println!(
                "{} cells, {failed} failed; curves in {}",
                outcome.cells.len(),
                outcome.curves_path().display()
            );
            Ok(if outcome.all_failed() { EXIT_ALL_FAILED } else { 0 })
        }
        Command::ScoreError(c) => {
            let (cfg, out) = load(&c)?;
            let rows = score_error_study(&cfg)?;
            let path = out.join("score_error.csv");
            write_score_error_csv(&path, &rows)?;
            println!("{} rows in {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Acceptance(c) => {
            let (cfg, out) = load(&c)?;
            let rows = acceptance_study(&cfg)?;
            let path = out.join("acceptance.csv");
            write_acceptance_csv(&path, &rows)?;
            println!("{} rows in {}", rows.len(), path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
