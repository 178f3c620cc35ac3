use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::data::AugmentConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Supervised fine-tuning on the labelled target samples only.
    Direct,
    /// Consistency on every unlabelled sample.
    MeanTeacher,
    /// Consistency only on unlabelled samples the teacher is confident about.
    ConfidenceMt,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Direct, Method::MeanTeacher, Method::ConfidenceMt];

    pub fn short_name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::MeanTeacher => "mt",
            Method::ConfidenceMt => "cmt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::MeanTeacher => "mean_teacher",
            Method::ConfidenceMt => "confidence_mt",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "mt" | "mean_teacher" => Ok(Method::MeanTeacher),
            "cmt" | "confidence_mt" => Ok(Method::ConfidenceMt),
            other => Err(Error::Argument(format!(
                "unknown method '{other}' (expected direct, mt or cmt)"
            ))),
        }
    }
}

/// How the pseudo-label uncertainty threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Median sample uncertainty of the initial teacher on the labelled set.
    Auto,
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ThresholdPolicy::Auto),
            "inf" | "+inf" | "infinity" => Ok(ThresholdPolicy::Fixed(f64::INFINITY)),
            v => match v.parse::<f64>() {
                Ok(t) if t >= 0.0 => Ok(ThresholdPolicy::Fixed(t)),
                _ => Err(Error::Argument(format!(
                    "threshold must be 'auto', 'inf' or a non-negative number, got '{v}'"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub method: Method,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub alpha_ramp_steps: usize,
    pub threshold: ThresholdPolicy,
    pub consistency_weight: f64,
    pub batch_labelled: usize,
    pub batch_pseudo: usize,
    /// Peaks per unlabelled image used for filtering and consistency.
    pub top_k: usize,
    pub epochs: usize,
    /// Optimiser steps per epoch; 0 means one pass over the labelled set.
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Perturbations for the two consistency views; must not rotate.
    pub augment: AugmentConfig,
    /// Perturbations applied to labelled samples in the supervised term.
    pub augment_labelled: AugmentConfig,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            method: Method::ConfidenceMt,
            alpha_start: 0.5,
            alpha_end: 0.99,
            alpha_ramp_steps: 500,
            threshold: ThresholdPolicy::Auto,
            consistency_weight: 1.0,
            batch_labelled: 6,
            batch_pseudo: 2,
            top_k: 3,
            epochs: 100,
            steps_per_epoch: 0,
            lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            augment: AugmentConfig::consistency(),
            augment_labelled: AugmentConfig {
                rotate90: false,
                ..AugmentConfig::default()
            },
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.alpha_start) || !(0.0..1.0).contains(&self.alpha_end) {
            return bad("alpha_start and alpha_end must lie in [0, 1)".into());
        }
        if self.alpha_end < self.alpha_start {
            return bad("alpha_end must not be below alpha_start".into());
        }
        if self.batch_labelled == 0 || self.top_k == 0 || self.epochs == 0 {
            return bad("batch_labelled, top_k and epochs must be positive".into());
        }
        if !(self.consistency_weight >= 0.0) {
            return bad("consistency_weight must be non-negative".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        if self.augment.rotate90 {
            return bad(
                "consistency augmentation cannot rotate: poses would not map back linearly".into(),
            );
        }
        if let ThresholdPolicy::Fixed(t) = self.threshold {
            if t.is_nan() || t < 0.0 {
                return bad(format!("threshold must be non-negative, got {t}"));
            }
        }
        Ok(())
    }

    /// Linear ramp from `alpha_start` to `alpha_end` over `alpha_ramp_steps`, then flat.
    pub fn alpha_at(&self, step: usize) -> f64 {
        if self.alpha_ramp_steps == 0 {
            return self.alpha_end;
        }
        let f = (step as f64 / self.alpha_ramp_steps as f64).min(1.0);
        (self.alpha_start + (self.alpha_end - self.alpha_start) * f)
            .clamp(self.alpha_start, self.alpha_end)
    }
}
