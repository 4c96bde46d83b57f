//! `ness`: validate models and run finite-volume experiments.
//!
//! Exit status is 0 when every check passes, 1 when a check fails and 2 on
//! bad input (unreadable files, parse errors, refused volumes).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Inputs};

#[derive(Parser)]
#[command(name = "ness", version, about = "Entropy production of finite quantum spin volumes coupled to thermal reservoirs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file (and the perturbation family of a config).
    Validate(Sources),
    /// Entropy production, heat direction and observable averages per volume and horizon.
    Simulate(Run),
    /// Seeded random instances of the trace inequality.
    KleinFuzz(Fuzz),
    /// Dynamics along a nested exhaustion, with series error bounds.
    SweepConvergence(Run),
    /// Entropy production after moving reservoir sites into the small system.
    RedrawCheck(Run),
}

#[derive(Args)]
struct Sources {
    /// Model file; overrides the config's model_path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Run {
    #[command(flatten)]
    sources: Sources,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Largest Hilbert-space dimension a volume may have.
    #[arg(long, default_value_t = 4096)]
    dim_cap: usize,
}

#[derive(Args)]
struct Fuzz {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    max_dim: usize,
    /// Overrides the config's seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Supplies seed and output directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write per-trial CSV and JSON; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Sources {
    fn resolve(&self, seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.model) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(model)) => ExperimentConfig::for_model(model.clone()),
            (None, None) => bail!("either --model or --config is required"),
        };
        if let Some(model) = &self.model {
            cfg.model_path = model.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate(src) => {
            let cfg = src.resolve(None)?;
            commands::validate(&cfg, src.config.is_some(), src.out.as_deref())
        }
        Command::Simulate(r) => commands::simulate(&Inputs::load(r.sources.resolve(r.seed)?)?, r.dim_cap),
        Command::SweepConvergence(r) => {
            commands::sweep_convergence(&Inputs::load(r.sources.resolve(r.seed)?)?, r.dim_cap)
        }
        Command::RedrawCheck(r) => commands::redraw_check(&Inputs::load(r.sources.resolve(r.seed)?)?, r.dim_cap),
        Command::KleinFuzz(f) => {
            let cfg = f.config.as_deref().map(ExperimentConfig::load).transpose()?;
            let seed = f.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let out = f.out.clone().or(cfg.map(|c| c.output_dir));
            commands::klein_fuzz(f.trials, f.max_dim, seed, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
