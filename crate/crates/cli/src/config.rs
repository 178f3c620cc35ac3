//! TOML run configuration. A file only needs the keys it changes; everything else
//! keeps its default. Unknown keys are rejected so typos do not pass silently.

use std::path::Path;

use anyhow::{Context, Result};
use graspmt::adapt::AdaptConfig;
use graspmt::model::ModelConfig;
use graspmt::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    /// Supervised two-step training (`train`).
    pub train: TrainConfig,
    /// LocNet fine-tuning on labelled target samples before `adapt`.
    pub finetune: TrainConfig,
    pub adapt: AdaptConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig {
                epochs: 30,
                batch_size: 6,
                ..TrainConfig::default()
            },
            adapt: AdaptConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let user: Value = toml::from_str(text).map_err(|e| UsageError(e.to_string()))?;
        let mut merged = Value::try_from(Config::default())?;
        merge(&mut merged, user, "")?;
        let cfg: Config = merged
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.finetune.validate()?;
        cfg.adapt.validate()?;
        Ok(cfg)
    }
}

/// Overlays `user` onto `base` key by key. Tables merge recursively; any other value
/// (including enum variants written as tables) replaces the default outright.
fn merge(base: &mut Value, user: Value, prefix: &str) -> Result<()> {
    match (base, user) {
        (Value::Table(b), Value::Table(u)) => {
            for (k, v) in u {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(UsageError(format!("unknown config key '{key}'")).into()),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
