use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training-curve entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub split: String,
    pub loss_name: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn push(&mut self, step: usize, epoch: usize, split: &str, loss_name: &str, value: f64) {
        self.rows.push(LogRow {
            step,
            epoch,
            split: split.into(),
            loss_name: loss_name.into(),
            value,
        });
    }

    /// Values of one series in order.
    pub fn series(&self, split: &str, loss_name: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.loss_name == loss_name)
            .map(|r| r.value)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
