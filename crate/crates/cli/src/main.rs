use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use quadsim::control::ControlLevel;
use quadsim::experiment::{self, ExperimentConfig, Preset};

/// Sim-to-sim quadrotor experiments: collect flight data on the oracle,
/// identify simulator parameters, train policies and evaluate their transfer.
#[derive(Parser, Debug)]
#[command(name = "quadsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "paper", value_parser = parse_preset)]
    preset: Preset,

    /// Restrict training and evaluation to one control level.
    #[arg(long, global = true, value_parser = parse_level)]
    level: Option<ControlLevel>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Fly the circle task on the oracle and log state and commands.
    Collect,
    /// Recover simulator parameters from the collected log.
    Simopt,
    /// Train the policy grid.
    Train,
    /// Fly every trained policy on the oracle.
    Evaluate,
    /// Summarize the outputs present in the output directory.
    Report,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse()
}

fn parse_level(s: &str) -> Result<ControlLevel, String> {
    s.parse()
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let base = ExperimentConfig::preset(cli.preset);
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &base)?,
        None => base,
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(level) = cli.level {
        cfg.grid.levels = vec![level];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    match cli.command {
        Command::Collect => {
            let log = experiment::cmd_collect(&cfg)?;
            println!("wrote {} rows to {}", log.len(), cfg.log_path().display());
        }
        Command::Simopt => {
            let report = experiment::cmd_simopt(&cfg)?;
            print!("{}", report.table_csv());
        }
        Command::Train => {
            let records = experiment::cmd_train_grid(&cfg)?;
            let failed = records.iter().filter(|r| !r.ok()).count();
            println!("trained {} policies ({failed} failed) into {}", records.len(), cfg.train_dir().display());
        }
        Command::Evaluate => {
            let report = experiment::cmd_evaluate(&cfg)?;
            for c in &report.cells {
                println!(
                    "{} t_m {:.3} latency {:.3}: median flight time {:.2} s over {} flights",
                    c.level, c.t_m, c.latency, c.stats.median, c.flights
                );
            }
        }
        Command::Report => {
            print!("{}", experiment::cmd_report(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
