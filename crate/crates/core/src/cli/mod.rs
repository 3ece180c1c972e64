//! The `distractnet` command line: `analyze`, `train`, `benchmark`, `report`.

pub mod commands;
pub mod config;
pub mod plots;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::models::Variant;
pub use commands::{cmd_analyze, cmd_benchmark, cmd_report, cmd_train};
pub use config::{Overrides, RunConfig, WEIGHTS_ENV};

pub const DEFAULT_CONFIG: &str = "distractnet.toml";

#[derive(Debug, Parser)]
#[command(name = "distractnet", version, about = "Train and benchmark driver-distraction classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (TOML). Defaults to ./distractnet.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Restrict train/benchmark to one variant id.
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Start every backbone from random weights.
    #[arg(long, global = true)]
    pub no_pretrained: bool,

    /// Directory holding vgg16/vgg19/resnet50 .safetensors backbones.
    #[arg(long, global = true, env = WEIGHTS_ENV)]
    pub weights_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Class counts and RGB channel histograms of the dataset.
    Analyze,
    /// Train the configured models (or just --model).
    Train,
    /// Time and score the newest checkpoint of each model.
    Benchmark,
    /// Collect every train and benchmark run into one markdown report.
    Report,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.render().to_string())),
    };
    let variant = cli.model.as_deref().map(str::parse::<Variant>).transpose()?;
    let path = cli.config.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG));
    if cli.config.is_none() && !path.is_file() {
        return Err(Error::Usage(format!(
            "no --config given and ./{DEFAULT_CONFIG} does not exist"
        )));
    }
    let mut cfg = RunConfig::load(&path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        no_pretrained: cli.no_pretrained,
        weights_dir: cli.weights_dir.clone(),
    });
    if let Some(v) = variant {
        cfg.models = vec![v.id().to_string()];
    }

    match cli.command {
        Command::Analyze => {
            let s = cmd_analyze(&cfg)?;
            println!("dataset {}: {} images", s.root.display(), s.total);
            for (folder, name, n) in &s.counts {
                println!("  {folder} {name:<24} {n}");
            }
            for w in &s.warnings {
                println!("  warning: {w}");
            }
            println!("artifacts in {}", s.run_dir.display());
        }
        Command::Train => {
            let s = cmd_train(&cfg, variant)?;
            for (v, h) in &s.histories {
                let b = h.best();
                println!(
                    "{v}: {} epochs, best epoch {} val_loss {:.4} val_acc {:.4}",
                    h.epochs.len(),
                    h.best_epoch,
                    b.val_loss,
                    b.val_acc
                );
            }
            println!("artifacts in {}", s.run_dir.display());
        }
        Command::Benchmark => {
            let s = cmd_benchmark(&cfg, variant)?;
            for (i, r) in s.report.rows.iter().enumerate() {
                if r.failed {
                    println!("{:>2}. {:<24} failed", i + 1, r.variant);
                } else {
                    println!(
                        "{:>2}. {:<24} acc {:.4} time {:.3}s{}",
                        i + 1,
                        r.variant,
                        r.accuracy,
                        r.elapsed_seconds,
                        if r.pareto { "  (pareto)" } else { "" }
                    );
                }
            }
            println!("artifacts in {}", s.run_dir.display());
        }
        Command::Report => {
            println!("{}", cmd_report(&cfg)?.display());
        }
    }
    Ok(())
}
