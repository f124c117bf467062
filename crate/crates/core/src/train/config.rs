use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::network::{InitParams, NetworkConfig};

/// Everything the epoch loop needs; defaults are the MNIST settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub init: InitParams,
    pub lr_weight: f64,
    pub lr_threshold: f64,
    pub kl_beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub scheduler_max_epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Steps per run and runs per sample for validation.
    pub time_steps: usize,
    pub mc_runs: usize,
    /// Validate after every `val_every` epochs and after the last one.
    pub val_every: usize,
    /// Record zero wall-clock times so that metrics files are reproducible byte for byte.
    pub deterministic: bool,
    /// Where to dump the model when training diverges.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            init: InitParams::default(),
            lr_weight: 5e-4,
            lr_threshold: 1e-5,
            kl_beta: 1e-3,
            epochs: 500,
            batch_size: 64,
            weight_decay: 1e-3,
            scheduler_max_epochs: 500,
            warmup_epochs: 0,
            seed: 42,
            time_steps: 10,
            mc_runs: 1,
            val_every: 1,
            deterministic: false,
            dump_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let positive = [
            ("lr_weight", self.lr_weight),
            ("lr_threshold", self.lr_threshold),
            ("sigmoid_scale_factor", self.network.rate.slope),
            ("eps", self.network.rate.eps),
            ("minimum_of_threshold", self.network.threshold_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("kl_beta", self.kl_beta), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("time_steps", self.time_steps),
            ("mc_runs", self.mc_runs),
            ("val_every", self.val_every),
            ("threshold_samples", self.network.threshold_samples),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
