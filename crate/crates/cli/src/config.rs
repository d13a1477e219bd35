//! Flat key = value experiment configuration.
//!
//! Precedence, lowest to highest: built-in defaults, config file,
//! command-line overrides, then the `CLADAPTER_SEED` environment variable
//! (seed only). Every field has a default; an empty config runs the
//! reference experiment.

use std::path::{Path, PathBuf};

use cladapter_core::finetune::{Mode, TrainPlan};
use cladapter_core::interface::TensorKind;
use cladapter_core::synth::TaskSpec;

use crate::error::{config_err, CliError, Result};

pub const SEED_ENV_VAR: &str = "CLADAPTER_SEED";

/// How the frozen backbone projection is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneInit {
    /// Seeded Gaussian projection.
    Random,
    /// Identity projection (requires input_dim == feature_dim); stands in
    /// for a backbone whose features are already well matched to the task.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // Task
    pub classes: usize,
    pub tokens_per_sample: usize,
    pub input_dim: usize,
    pub sigma: f64,
    pub theta_shift_deg: f64,
    pub shift_translation: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub backbone_kind: TensorKind,
    pub backbone_init: BackboneInit,
    // Adapter
    pub feature_dim: usize,
    pub clusters: usize,
    pub mlp_ratio: usize,
    // Training plan
    pub mode: Mode,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    // Output
    pub out_dir: PathBuf,
    pub export_features: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            classes: 5,
            tokens_per_sample: 8,
            input_dim: 16,
            sigma: 0.6,
            theta_shift_deg: 45.0,
            shift_translation: 2.0,
            train_per_class: 200,
            val_per_class: 100,
            backbone_kind: TensorKind::VitTokens,
            backbone_init: BackboneInit::Random,
            feature_dim: 16,
            clusters: 20,
            mlp_ratio: 4,
            mode: Mode::Sft,
            stage1_epochs: 40,
            stage2_epochs: 60,
            lr: 1e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            seed: 0,
            out_dir: PathBuf::from("out"),
            export_features: false,
        }
    }
}

/// All recognized configuration keys, in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "classes",
    "tokens_per_sample",
    "input_dim",
    "sigma",
    "theta_shift_deg",
    "shift_translation",
    "train_per_class",
    "val_per_class",
    "backbone_kind",
    "backbone_init",
    "feature_dim",
    "clusters",
    "mlp_ratio",
    "mode",
    "stage1_epochs",
    "stage2_epochs",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "seed",
    "out_dir",
    "export_features",
];

fn parse<T: std::str::FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config {
            field: field.to_string(),
            message: format!("cannot parse `{}`: {e}", value.trim()),
        })
}

impl ExperimentConfig {
    /// Applies one key/value pair; unknown keys and bad values are config
    /// errors naming the field.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "classes" => self.classes = parse(key, value)?,
            "tokens_per_sample" => self.tokens_per_sample = parse(key, value)?,
            "input_dim" => self.input_dim = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "theta_shift_deg" => self.theta_shift_deg = parse(key, value)?,
            "shift_translation" => self.shift_translation = parse(key, value)?,
            "train_per_class" => self.train_per_class = parse(key, value)?,
            "val_per_class" => self.val_per_class = parse(key, value)?,
            "backbone_kind" => {
                self.backbone_kind = match value.trim().to_ascii_lowercase().as_str() {
                    "vit" => TensorKind::VitTokens,
                    "cnn" => TensorKind::CnnMap,
                    "video" => TensorKind::VideoClip,
                    other => {
                        return config_err(
                            key,
                            format!("`{other}` is not one of vit, cnn, video"),
                        )
                    }
                }
            }
            "backbone_init" => {
                self.backbone_init = match value.trim().to_ascii_lowercase().as_str() {
                    "random" => BackboneInit::Random,
                    "identity" => BackboneInit::Identity,
                    other => {
                        return config_err(
                            key,
                            format!("`{other}` is not one of random, identity"),
                        )
                    }
                }
            }
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "mode" => {
                self.mode = match value.trim().to_ascii_lowercase().as_str() {
                    "lp" => Mode::Lp,
                    "ft" => Mode::Ft,
                    "sft" => Mode::Sft,
                    other => {
                        return config_err(key, format!("`{other}` is not one of lp, ft, sft"))
                    }
                }
            }
            "stage1_epochs" => self.stage1_epochs = parse(key, value)?,
            "stage2_epochs" => self.stage2_epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "export_features" => self.export_features = parse(key, value)?,
            unknown => return config_err(unknown, "unknown configuration key"),
        }
        Ok(())
    }

    /// Parses a flat key = value file. `#` starts a comment; blank lines are
    /// skipped; later assignments win.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(
                    "<file>",
                    format!("{}:{}: expected `key = value`, got `{raw}`", path.display(), lineno + 1),
                );
            };
            self.apply_kv(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies the `CLADAPTER_SEED` override when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            self.seed = parse(SEED_ENV_VAR, &value)?;
        }
        Ok(())
    }

    /// Field-level sanity checks, reported with the offending field name.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return config_err("classes", "must be >= 2");
        }
        if self.tokens_per_sample == 0 {
            return config_err("tokens_per_sample", "must be >= 1");
        }
        if self.input_dim == 0 {
            return config_err("input_dim", "must be >= 1");
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return config_err("sigma", "must be positive");
        }
        if self.train_per_class == 0 {
            return config_err("train_per_class", "must be >= 1");
        }
        if self.val_per_class == 0 {
            return config_err("val_per_class", "must be >= 1");
        }
        if self.feature_dim == 0 {
            return config_err("feature_dim", "must be >= 1");
        }
        if self.clusters == 0 {
            return config_err("clusters", "must be >= 1");
        }
        if self.mlp_ratio == 0 {
            return config_err("mlp_ratio", "must be >= 1");
        }
        if self.backbone_init == BackboneInit::Identity && self.input_dim != self.feature_dim {
            return config_err(
                "backbone_init",
                format!(
                    "identity needs input_dim == feature_dim, got {} vs {}",
                    self.input_dim, self.feature_dim
                ),
            );
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return config_err("lr", "must be positive");
        }
        if self.weight_decay < 0.0 {
            return config_err("weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return config_err("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return config_err("beta2", "must lie in [0, 1)");
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return config_err("adam_eps", "must be positive");
        }
        if self.batch_size == 0 {
            return config_err("batch_size", "must be >= 1");
        }
        if self.mode == Mode::Sft && self.stage1_epochs == 0 {
            return config_err("stage1_epochs", "must be >= 1 in sft mode");
        }
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            classes: self.classes,
            tokens_per_sample: self.tokens_per_sample,
            input_dim: self.input_dim,
            sigma: self.sigma,
            theta_shift_deg: self.theta_shift_deg,
            shift_translation: self.shift_translation,
            train_per_class: self.train_per_class,
            val_per_class: self.val_per_class,
            seed: self.seed,
        }
    }

    pub fn train_plan(&self) -> TrainPlan {
        TrainPlan {
            mode: self.mode,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            seed: self.seed.wrapping_add(3),
        }
    }
}
