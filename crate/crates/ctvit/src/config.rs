//! Run configuration: built-in defaults, overridden by a `key=value` file,
//! overridden by command-line flags. Unknown keys are a startup error, and
//! the fully resolved configuration is echoed into every output directory.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::model::{ModelConfig, Variant};
use crate::preproc::PreprocOptions;
use crate::trainer::{OptKind, TrainConfig};

/// Evaluation settings.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub threshold: f64,
    /// Sweep thresholds; defaults cover the reference operating points.
    pub thresholds: Vec<f64>,
    pub aggregation: Aggregation,
}

/// Phantom generator geometry.
#[derive(Debug, Clone)]
pub struct PhantomSettings {
    pub width: usize,
    pub height: usize,
}

/// Model settings prior to variant resolution (`patch_size` 0 = pick the
/// variant default, 7 for 2D and 8 for 3D).
#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub variant: Variant,
    pub patch_size: usize,
    pub image_size: usize,
    pub volume_depth: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub threads: usize,
    pub seed: u64,
    pub preproc: PreprocOptions,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub phantom: PhantomSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 1,
            seed: 42,
            preproc: PreprocOptions::default(),
            model: ModelSettings {
                variant: Variant::Vit2d,
                patch_size: 0,
                image_size: 224,
                volume_depth: 32,
                embed_dim: 128,
                depth: 6,
                num_heads: 8,
                mlp_dim: 256,
                dropout: 0.1,
            },
            train: TrainConfig::default(),
            eval: EvalSettings {
                threshold: 0.25,
                thresholds: vec![0.05, 0.06, 0.20, 0.25],
                aggregation: Aggregation::Vote,
            },
            phantom: PhantomSettings {
                width: 448,
                height: 320,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))
}

impl RunConfig {
    /// Applies one `key=value` setting; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "threads" => self.threads = parse(key, value)?,
            "seed" => {
                self.seed = parse(key, value)?;
                self.train.seed = self.seed;
            }
            "preproc.min_lung_fraction" => {
                let v: f64 = parse(key, value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("`{key}` must be in [0, 1], got {v}")));
                }
                self.preproc.min_lung_fraction = v;
            }
            "preproc.roi_margin_px" => self.preproc.roi_margin_px = parse(key, value)?,
            "model.variant" => self.model.variant = Variant::parse(value)?,
            "model.patch_size" => self.model.patch_size = parse(key, value)?,
            "model.image_size" => self.model.image_size = parse(key, value)?,
            "model.volume_depth" => self.model.volume_depth = parse(key, value)?,
            "model.embed_dim" => self.model.embed_dim = parse(key, value)?,
            "model.depth" => self.model.depth = parse(key, value)?,
            "model.num_heads" => self.model.num_heads = parse(key, value)?,
            "model.mlp_dim" => self.model.mlp_dim = parse(key, value)?,
            "model.dropout" => self.model.dropout = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.learning_rate = parse(key, value)?,
            "train.max_steps" => {
                let v: u64 = parse(key, value)?;
                self.train.max_steps = (v > 0).then_some(v);
            }
            "train.checkpoint_interval" => self.train.checkpoint_interval = parse(key, value)?,
            "train.optimizer" => {
                self.train.optimizer = match value {
                    "adam" => OptKind::Adam,
                    "sgd" => OptKind::Sgd { momentum: 0.9 },
                    other => {
                        return Err(Error::Config(format!(
                            "unknown optimizer `{other}` (expected adam or sgd)"
                        )))
                    }
                }
            }
            "train.sgd_momentum" => {
                let momentum: f64 = parse(key, value)?;
                self.train.optimizer = OptKind::Sgd { momentum };
            }
            "eval.threshold" => {
                let v: f64 = parse(key, value)?;
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::Config(format!("`{key}` must be in [0, 1), got {v}")));
                }
                self.eval.threshold = v;
            }
            "eval.thresholds" => {
                let mut out = Vec::new();
                for part in value.split(',') {
                    let v: f64 = parse(key, part.trim())?;
                    if !(0.0..1.0).contains(&v) {
                        return Err(Error::Config(format!(
                            "`{key}` entries must be in [0, 1), got {v}"
                        )));
                    }
                    out.push(v);
                }
                if out.is_empty() {
                    return Err(Error::Config(format!("`{key}` must list at least one value")));
                }
                self.eval.thresholds = out;
            }
            "eval.aggregation" => {
                self.eval.aggregation = match value {
                    "vote" => Aggregation::Vote,
                    "mean-score" => Aggregation::MeanScore,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown aggregation `{other}` (expected vote or mean-score; mean-score is experimental)"
                        )))
                    }
                }
            }
            "phantom.width" => self.phantom.width = parse(key, value)?,
            "phantom.height" => self.phantom.height = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Loads a config file: one `key=value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key=value`, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Final model configuration with variant-dependent defaults filled in.
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let patch_size = if m.patch_size == 0 {
            match m.variant {
                Variant::Vit2d => 7,
                Variant::Vit3d => 8,
            }
        } else {
            m.patch_size
        };
        let config = ModelConfig {
            variant: m.variant,
            patch_size,
            image_size: m.image_size,
            volume_depth: if m.variant == Variant::Vit2d {
                1
            } else {
                m.volume_depth
            },
            embed_dim: m.embed_dim,
            depth: m.depth,
            num_heads: m.num_heads,
            mlp_dim: m.mlp_dim,
            num_classes: 2,
            dropout: m.dropout,
        };
        config.validate()?;
        Ok(config)
    }

    /// Canonical `key=value` rendering of the resolved configuration.
    pub fn to_lines(&self) -> Result<String> {
        let model = self.resolved_model()?;
        let thresholds: Vec<String> = self.eval.thresholds.iter().map(|t| t.to_string()).collect();
        let (opt_name, momentum) = match self.train.optimizer {
            OptKind::Adam => ("adam", None),
            OptKind::Sgd { momentum } => ("sgd", Some(momentum)),
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("threads", self.threads.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "preproc.min_lung_fraction",
            self.preproc.min_lung_fraction.to_string(),
        );
        kv("preproc.roi_margin_px", self.preproc.roi_margin_px.to_string());
        kv("model.variant", model.variant.name().to_string());
        kv("model.patch_size", model.patch_size.to_string());
        kv("model.image_size", model.image_size.to_string());
        kv("model.volume_depth", model.volume_depth.to_string());
        kv("model.embed_dim", model.embed_dim.to_string());
        kv("model.depth", model.depth.to_string());
        kv("model.num_heads", model.num_heads.to_string());
        kv("model.mlp_dim", model.mlp_dim.to_string());
        kv("model.dropout", model.dropout.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.lr", self.train.learning_rate.to_string());
        kv(
            "train.max_steps",
            self.train.max_steps.unwrap_or(0).to_string(),
        );
        kv(
            "train.checkpoint_interval",
            self.train.checkpoint_interval.to_string(),
        );
        kv("train.optimizer", opt_name.to_string());
        if let Some(m) = momentum {
            kv("train.sgd_momentum", m.to_string());
        }
        kv("eval.threshold", self.eval.threshold.to_string());
        kv("eval.thresholds", thresholds.join(","));
        kv(
            "eval.aggregation",
            match self.eval.aggregation {
                Aggregation::Vote => "vote".to_string(),
                Aggregation::MeanScore => "mean-score".to_string(),
            },
        );
        kv("phantom.width", self.phantom.width.to_string());
        kv("phantom.height", self.phantom.height.to_string());
        Ok(out)
    }

    /// Writes `config.resolved.txt` into an output directory.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.resolved.txt");
        fs::write(&path, self.to_lines()?).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_an_error() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply("model.embed_dims", "64"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn precedence_file_then_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# comment\ntrain.lr=0.5\nmodel.embed_dim=64\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.model.embed_dim, 64);
        // A later flag-style apply wins.
        cfg.apply("train.lr", "0.25").unwrap();
        assert_eq!(cfg.train.learning_rate, 0.25);
    }

    #[test]
    fn seed_propagates_into_training() {
        let mut cfg = RunConfig::default();
        cfg.apply("seed", "123").unwrap();
        assert_eq!(cfg.train.seed, 123);
    }

    #[test]
    fn variant_defaults_resolve_patch_size() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.resolved_model().unwrap().patch_size, 7);
        cfg.apply("model.variant", "vit3d").unwrap();
        let m = cfg.resolved_model().unwrap();
        assert_eq!(m.patch_size, 8);
        assert_eq!(m.volume_depth, 32);
        cfg.apply("model.patch_size", "4").unwrap();
        cfg.apply("model.image_size", "16").unwrap();
        assert_eq!(cfg.resolved_model().unwrap().patch_size, 4);
    }

    #[test]
    fn resolved_lines_round_trip_through_apply() {
        let mut cfg = RunConfig::default();
        cfg.apply("model.variant", "vit3d").unwrap();
        cfg.apply("train.lr", "0.004").unwrap();
        cfg.apply("eval.thresholds", "0.1, 0.2").unwrap();
        let lines = cfg.to_lines().unwrap();
        let mut back = RunConfig::default();
        for line in lines.lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.apply(k, v).unwrap();
        }
        assert_eq!(back.to_lines().unwrap(), lines);
    }

    #[test]
    fn threshold_bounds_enforced() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("eval.threshold", "1.0").is_err());
        assert!(cfg.apply("eval.thresholds", "0.2,1.5").is_err());
        assert!(cfg.apply("preproc.min_lung_fraction", "1.5").is_err());
    }

    #[test]
    fn bad_file_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "not a key value line\n").unwrap();
        let mut cfg = RunConfig::default();
        assert!(cfg.load_file(&path).is_err());
    }
}
