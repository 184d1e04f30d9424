//! Training hyperparameters and the `key = value` run configuration.

use std::path::PathBuf;

use crate::arch::{NetworkConfig, MODEL_KEYS};
use crate::data::{DegradationKind, DegradationSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// LR patch extent; HR patches are `patch_size * scale`.
    pub patch_size: usize,
    pub lr0: f64,
    pub halving_epochs: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub seed: u64,
    /// Draw one of the eight dihedral transforms per patch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            patch_size: 48,
            lr0: 1e-4,
            halving_epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 400,
            steps_per_epoch: 1000,
            seed: 0,
            augment: true,
        }
    }
}

pub const TRAIN_KEYS: [&str; 11] = [
    "batch_size",
    "patch_size",
    "lr0",
    "halving_epochs",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "steps_per_epoch",
    "seed",
    "augment",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{}' for {key}", value.trim())))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.patch_size > 0
            && self.halving_epochs > 0
            && self.epochs > 0
            && self.steps_per_epoch > 0
            && self.eps > 0.0;
        if !positive {
            return Err(Error::Config("batch, patch, epochs, halving period, steps and eps must be positive".into()));
        }
        // lr0 = 0 is allowed as a frozen-weights diagnostic.
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 = {} must be a finite non-negative number", self.lr0)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} = {b} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "lr0" | "lr" => self.lr0 = parse(key, value)?,
            "halving_epochs" => self.halving_epochs = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown train key '{key}'"))),
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: `lr0 * 0.5^floor(epoch / halving_epochs)`.
pub fn lr_at(epoch: u64, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.halving_epochs).min(1074) as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

/// Where training images come from and how LR inputs are synthesized.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Directory of PNGs or a manifest file.
    pub train: Option<PathBuf>,
    pub degradation: DegradationKind,
    pub blur_size: usize,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = DegradationSpec::new(DegradationKind::Bi, 1);
        DataConfig {
            train: None,
            degradation: d.kind,
            blur_size: d.blur_size,
            blur_sigma: d.blur_sigma,
            noise_sigma: d.noise_sigma,
            seed: d.seed,
        }
    }
}

pub const DATA_KEYS: [&str; 6] = ["train", "degradation", "blur_size", "blur_sigma", "noise_sigma", "seed"];

impl DataConfig {
    pub fn spec(&self, scale: usize) -> DegradationSpec {
        DegradationSpec {
            kind: self.degradation,
            scale,
            blur_size: self.blur_size,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train" => self.train = Some(PathBuf::from(value.trim())),
            "degradation" => self.degradation = value.trim().parse()?,
            "blur_size" => self.blur_size = parse(key, value)?,
            "blur_sigma" => self.blur_sigma = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown data key '{key}'"))),
        }
        Ok(())
    }
}

/// Everything a run needs, addressed by dotted keys such as `model.scale`,
/// `train.lr0` and `data.degradation`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn set(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (section, key) = dotted
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("key '{dotted}' needs a section prefix (model., train., data.)")))?;
        match section {
            "model" => self.model.set(key, value),
            "train" => self.train.set(key, value),
            "data" => self.data.set(key, value),
            _ => Err(Error::Config(format!("unknown config section '{section}'"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.spec(self.model.scale).validate()
    }

    /// Every dotted key accepted by [`RunConfig::set`].
    pub fn keys() -> Vec<String> {
        let mut keys: Vec<String> = MODEL_KEYS.iter().map(|k| format!("model.{k}")).collect();
        keys.extend(TRAIN_KEYS.iter().map(|k| format!("train.{k}")));
        keys.extend(DATA_KEYS.iter().map(|k| format!("data.{k}")));
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 1e-4);
        assert_eq!(lr_at(199, &c), 1e-4);
        assert_eq!(lr_at(200, &c), 5e-5);
        assert_eq!(lr_at(400, &c), 2.5e-5);
    }

    #[test]
    fn dotted_keys() {
        let cfg = RunConfig::from_text("model.scale = 2\n# x\ntrain.lr0 = 2e-4\ndata.degradation = bd\n").unwrap();
        assert_eq!(cfg.model.scale, 2);
        assert_eq!(cfg.train.lr0, 2e-4);
        assert_eq!(cfg.data.degradation, DegradationKind::Bd);
        assert!(RunConfig::from_text("model.scael = 2").is_err());
        assert!(RunConfig::from_text("scale = 2").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_override("train.beta1=1.5").is_ok());
        assert!(c.validate().is_err());
    }
}
