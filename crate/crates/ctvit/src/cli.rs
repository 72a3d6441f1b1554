//! Command-line interface wiring the pipeline together:
//! `gen-phantom` -> `preprocess` -> optional `build-volumes` -> `train` ->
//! `predict` -> `evaluate` / `sweep`.
//!
//! Settings resolve as flags > config file > built-in defaults. `--set
//! key=value` accepts any config key; unknown keys abort at startup.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::pipeline;

#[derive(Parser)]
#[command(
    name = "ctvit",
    version,
    about = "CT lung classification: preprocessing, vision-transformer training and subject-level vote evaluation"
)]
pub struct Cli {
    /// Config file of key=value lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (1 = bitwise-deterministic mode).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Seed for everything stochastic.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Extra config overrides, e.g. --set model.embed_dim=64 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    GenPhantom {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// COVID subjects in the train split.
        #[arg(long, default_value_t = 20)]
        covid: usize,
        /// Non-COVID subjects in the train split.
        #[arg(long, default_value_t = 20)]
        noncovid: usize,
        /// COVID subjects in the validation split.
        #[arg(long, default_value_t = 0)]
        val_covid: usize,
        /// Non-COVID subjects in the validation split.
        #[arg(long, default_value_t = 0)]
        val_noncovid: usize,
    },
    /// Segment lungs, drop low-content slices, crop and resize.
    Preprocess {
        /// Dataset root (defaults to $CTVIT_DATA_ROOT).
        #[arg(long, env = "CTVIT_DATA_ROOT", value_name = "DIR")]
        data: PathBuf,
        /// Comma-separated splits to process.
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Export 32-slice sub-volumes as .hdr/.img containers.
    BuildVolumes {
        /// Preprocessed root (output of `preprocess`).
        #[arg(long, env = "CTVIT_DATA_ROOT", value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the classifier on a preprocessed split.
    Train {
        #[arg(long, env = "CTVIT_DATA_ROOT", value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Model variant: vit2d or vit3d.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Optimizer step budget (overrides epochs when reached first).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Score every kept slice (or sub-volume) with a trained checkpoint.
    Predict {
        #[arg(long, env = "CTVIT_DATA_ROOT", value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Aggregate slice scores into subject decisions and print the table.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        /// Vote threshold; defaults to eval.threshold (0.25).
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate at several thresholds.
    Sweep {
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        /// Comma-separated thresholds; defaults to eval.thresholds.
        #[arg(long)]
        thresholds: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn parse_splits(s: &str) -> Result<Vec<Split>> {
    s.split(',').map(|p| Split::parse(p.trim())).collect()
}

/// Resolves the configuration: defaults, then file, then overrides.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    for pair in &cli.set {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got `{pair}`"))
        })?;
        cfg.apply(k.trim(), v.trim())?;
    }
    if let Some(threads) = cli.threads {
        cfg.apply("threads", &threads.to_string())?;
    }
    if let Some(seed) = cli.seed {
        cfg.apply("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

/// Parses argv and runs the selected subcommand.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    dispatch(cli)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::GenPhantom {
            out,
            covid,
            noncovid,
            val_covid,
            val_noncovid,
        } => pipeline::run_gen_phantom(&cfg, out, *covid, *noncovid, *val_covid, *val_noncovid),
        Command::Preprocess { data, split, out } => {
            let splits = parse_splits(split)?;
            pipeline::run_preprocess(&cfg, data, &splits, out)
        }
        Command::BuildVolumes { data, split, out } => {
            let splits = parse_splits(split)?;
            for split in splits {
                pipeline::run_build_volumes(&cfg, data, split, out)?;
            }
            Ok(())
        }
        Command::Train {
            data,
            split,
            out,
            resume,
            variant,
            epochs,
            batch_size,
            lr,
            steps,
        } => {
            if let Some(v) = variant {
                Variant::parse(v)?;
                cfg.apply("model.variant", v)?;
            }
            if let Some(e) = epochs {
                cfg.apply("train.epochs", &e.to_string())?;
            }
            if let Some(b) = batch_size {
                cfg.apply("train.batch_size", &b.to_string())?;
            }
            if let Some(lr) = lr {
                cfg.apply("train.lr", &lr.to_string())?;
            }
            if let Some(s) = steps {
                cfg.apply("train.max_steps", &s.to_string())?;
            }
            let split = Split::parse(split)?;
            pipeline::run_train(&cfg, data, split, out, resume.as_deref())
        }
        Command::Predict {
            data,
            split,
            checkpoint,
            out,
        } => {
            let split = Split::parse(split)?;
            pipeline::run_predict(&cfg, data, split, checkpoint, out)
        }
        Command::Evaluate {
            scores,
            labels,
            threshold,
            out,
        } => {
            let t = threshold.unwrap_or(cfg.eval.threshold);
            pipeline::run_evaluate(&cfg, scores, labels, t, out.as_deref())
        }
        Command::Sweep {
            scores,
            labels,
            thresholds,
            out,
        } => {
            let ts: Vec<f64> = match thresholds {
                Some(list) => {
                    let mut out = Vec::new();
                    for part in list.split(',') {
                        out.push(part.trim().parse().map_err(|e| {
                            Error::Config(format!("bad threshold `{part}`: {e}"))
                        })?);
                    }
                    out
                }
                None => cfg.eval.thresholds.clone(),
            };
            pipeline::run_sweep(&cfg, scores, labels, &ts, out.as_deref())
        }
    }
}
