use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dvge::commands;
use dvge::config::{ExperimentConfig, Method};
use dvge_core::explain::Psi;

#[derive(Parser)]
#[command(
    name = "dvge",
    version,
    about = "Debias downstream classifiers by perturbing VAE latent codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults to the built-in synthetic experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this master seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    Plain,
    Dvge,
    Adt,
    DimRemoval,
}

#[derive(Clone, Copy, ValueEnum)]
enum PsiName {
    Identity,
    Abs,
    AbsNormalized,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or reuse from cache) the encoder for every seed.
    TrainVae(Common),
    /// Train the encoder and the sensitive classifier for every seed.
    TrainSensitive(Common),
    /// Train one downstream model per seed and evaluate it.
    TrainTask {
        #[command(flatten)]
        common: Common,
        /// Method to train; defaults to the first point of the config grid.
        #[arg(long, value_enum)]
        method: Option<MethodName>,
        #[arg(long, default_value_t = 1.0)]
        eta1: f64,
        #[arg(long, default_value_t = 0.5)]
        eta2: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Dump sensitive-focus explanation maps of the test split.
        #[arg(long, value_enum)]
        explain: Option<PsiName>,
    },
    /// Run every grid point for every seed; write results and Pareto fronts.
    Sweep(Common),
    /// Retrained and fixed sensitive-classifier ablations.
    Ablation(Common),
    /// Write the configured dataset as a normalised CSV.
    SynthData(Common),
    /// Summarise results CSVs in a directory and write front CSVs.
    Report {
        /// Directory holding `*_results.csv` files.
        dir: PathBuf,
        /// Where to write front CSVs and summary.txt (defaults to `dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::synthetic_default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainVae(c) => {
            let m = commands::train_vae(&load_config(&c)?, &c.out, c.jobs)?;
            for s in &m.stages {
                let state = if s.vae_cache_hit { "cached" } else { "trained" };
                println!(
                    "seed {}: encoder {} ({})",
                    s.seed,
                    display(&s.vae_checkpoint),
                    state
                );
            }
        }
        Command::TrainSensitive(c) => {
            let m = commands::train_sensitive(&load_config(&c)?, &c.out, c.jobs)?;
            for s in &m.stages {
                println!(
                    "seed {}: sensitive classifier {} held-out accuracy {:.4} (epoch {})",
                    s.seed,
                    display(&s.sensitive_checkpoint),
                    s.sensitive_best_accuracy,
                    s.sensitive_best_epoch
                );
            }
        }
        Command::TrainTask {
            common,
            method,
            eta1,
            eta2,
            lambda,
            k,
            explain,
        } => {
            let cfg = load_config(&common)?;
            let method = match method {
                None => *cfg.grid().first().context("config has no methods")?,
                Some(MethodName::Plain) => Method::Plain,
                Some(MethodName::Dvge) => Method::Dvge { eta1, eta2 },
                Some(MethodName::Adt) => Method::Adt { lambda },
                Some(MethodName::DimRemoval) => Method::DimRemoval { k },
            };
            let psi = explain.map(|p| match p {
                PsiName::Identity => Psi::Identity,
                PsiName::Abs => Psi::Abs,
                PsiName::AbsNormalized => Psi::AbsNormalized,
            });
            let (_, rows) = commands::train_task(&cfg, method, &common.out, common.jobs, psi)?;
            for r in rows {
                println!(
                    "{} {}: accuracy {:.4} delta_dp {:.4} delta_eo {:.4}",
                    r.run_id, r.method, r.accuracy, r.delta_dp, r.delta_eo
                );
            }
        }
        Command::Sweep(c) => {
            let (m, rows) = commands::sweep(&load_config(&c)?, &c.out, c.jobs)?;
            println!("{} runs, {} failed", rows.len(), m.failures.len());
            for f in &m.failures {
                eprintln!("failed: {}", f);
            }
            for p in &m.outputs {
                println!("wrote {}", p.display());
            }
        }
        Command::Ablation(c) => {
            let (m, _) = commands::ablation(&load_config(&c)?, &c.out, c.jobs)?;
            for p in &m.outputs {
                println!("wrote {}", p.display());
            }
        }
        Command::SynthData(c) => {
            let p = commands::synth_data(&load_config(&c)?, &c.out)?;
            println!("wrote {}", p.display());
        }
        Command::Report { dir, out } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            let out = out.unwrap_or_else(|| dir.clone());
            print!("{}", commands::report(&dir, &out)?);
        }
    }
    Ok(())
}

fn display(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "-".into(), |p| p.display().to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
