use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weedipp::harness::{compare_variants, run_experiment, sweep_variants, ExperimentConfig, Variant};
use weedipp::Error;

/// Simulated UAV weed-mapping missions with informative path planning.
#[derive(Parser)]
#[command(name = "weedipp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the variants listed in the config (or the `[planner]` section alone).
    Run(Common),
    /// IPP against lawnmower coverage and RIG-tree.
    Compare(Common),
    /// Every viewpoint objective crossed with every CMA-ES mode.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the first trial, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write replan tables and log progress.
    #[arg(long)]
    verbose: bool,
}

impl Common {
    fn load(&self) -> weedipp::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed_base = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        cfg.verbose |= self.verbose;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(common: &Common, variants: impl FnOnce(&ExperimentConfig) -> Vec<Variant>) -> weedipp::Result<()> {
    let cfg = common.load()?;
    let variants = variants(&cfg);
    log::info!(
        "{} trials of {} variants into {}",
        cfg.trials,
        variants.len(),
        cfg.output_dir.display()
    );
    let outcomes = run_experiment(&cfg, &variants)?;
    for o in &outcomes {
        let h: Vec<f64> = o.trials.iter().filter_map(|r| r.log.last().map(|r| r.entropy)).collect();
        println!(
            "{}: mean final entropy {:.1} nats over {} trials",
            o.variant.name,
            h.iter().sum::<f64>() / h.len() as f64,
            h.len()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Run(c) | Command::Compare(c) | Command::Sweep(c) => c,
    };
    let level = if common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Run(c) => execute(c, ExperimentConfig::run_variants),
        Command::Compare(c) => execute(c, |_| compare_variants()),
        Command::Sweep(c) => execute(c, |_| sweep_variants()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
