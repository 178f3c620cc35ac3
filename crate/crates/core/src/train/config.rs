use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::data::AugmentConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_pose: f64,
    pub lr_loc: f64,
    /// Learning rate is multiplied by `lr_decay` every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub optimizer: OptimizerKind,
    /// Augmentation for pose training; LocNet trains on cached features without it.
    /// Depth dropout keeps the RGB branch useful for inputs that arrive without depth.
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_pose: 1e-4,
            lr_loc: 3e-4,
            lr_decay: 0.5,
            decay_every: 20,
            epochs: 60,
            seed: 0,
            checkpoint_every: 0,
            optimizer: OptimizerKind::Adam,
            augment: AugmentConfig {
                rotate90: false,
                depth_dropout: 0.5,
                ..AugmentConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 {
            return Err(Error::Config(
                "batch_size, epochs and decay_every must be positive".into(),
            ));
        }
        if !(self.lr_pose > 0.0 && self.lr_loc > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Step-decayed rate for a (0-based) epoch.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        base * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
