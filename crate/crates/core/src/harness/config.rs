use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generators::GeneratorConfig;
use crate::losses::LossWeights;

/// Environment variable that overrides every seed of a run.
pub const SEED_ENV: &str = "LPNET_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Parameter initialization.
    pub init: u64,
    /// Pair sampling.
    pub data: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Dataset directory written by `gen-data`.
    pub dataset: PathBuf,
    /// Checkpoints and loss log go here.
    pub output: PathBuf,
    pub resolution: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Total optimizer steps. When set, the schedule is stretched so that
    /// `epochs` nominal epochs span exactly this many steps.
    pub steps: Option<usize>,
    /// Epochs at the initial generator learning rate before linear decay.
    pub hold_epochs: usize,
    pub lr_g: f64,
    pub lr_g_final: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub model: GeneratorConfig,
    pub disc_width: usize,
    pub seeds: Seeds,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Full-scale schedule: 30 epochs, G learning rate held for 5 then
    /// decayed linearly, batch 4.
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("run"),
            resolution: 64,
            batch_size: 4,
            epochs: 30,
            steps: None,
            hold_epochs: 5,
            lr_g: 2e-3,
            lr_g_final: 2e-6,
            lr_d: 2e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            model: GeneratorConfig::default(),
            disc_width: 8,
            seeds: Seeds { init: 17, data: 17 },
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: 2,000 steps at 64x64 with batch 2.
    pub fn desk() -> Self {
        Self {
            steps: Some(2000),
            batch_size: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.steps == Some(0) {
            return Err(Error::Config("batch_size, epochs and steps must be positive".into()));
        }
        if self.resolution < 16 || !self.resolution.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "resolution must be a positive multiple of 16, got {}",
                self.resolution
            )));
        }
        if self.hold_epochs > self.epochs {
            return Err(Error::Config("hold_epochs exceeds epochs".into()));
        }
        for (name, lr) in [
            ("lr_g", self.lr_g),
            ("lr_g_final", self.lr_g_final),
            ("lr_d", self.lr_d),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.disc_width == 0 {
            return Err(Error::Config("disc_width must be positive".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces every seed with `LPNET_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
            self.seeds = Seeds { init: seed, data: seed };
        }
        Ok(())
    }

    /// Hash of the settings a resumed run must share with its checkpoint.
    /// Paths, the step budget and the checkpoint interval may change.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.dataset = PathBuf::new();
        c.output = PathBuf::new();
        c.steps = None;
        c.checkpoint_every = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).into()
    }

    pub fn total_steps(&self, train_len: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * train_len.div_ceil(self.batch_size).max(1))
    }

    /// Fractional epoch reached after `step` steps.
    pub fn epoch_at(&self, step: usize, train_len: usize) -> f64 {
        step as f64 * self.epochs as f64 / self.total_steps(train_len) as f64
    }

    /// Generator learning rate at a (fractional) epoch: constant through
    /// `hold_epochs`, then linear down to `lr_g_final` at the last epoch.
    pub fn lr_g_at_epoch(&self, epoch: f64) -> f64 {
        let hold = self.hold_epochs as f64;
        let end = self.epochs as f64;
        if epoch <= hold || end <= hold {
            return self.lr_g;
        }
        let t = ((epoch - hold) / (end - hold)).min(1.0);
        self.lr_g + (self.lr_g_final - self.lr_g) * t
    }

    pub fn lr_g_at(&self, step: usize, train_len: usize) -> f64 {
        self.lr_g_at_epoch(self.epoch_at(step, train_len))
    }
}
