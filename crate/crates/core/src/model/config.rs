use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape and post-processing settings; persisted as the checkpoint's JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    /// Channels of the four encoder stages.
    pub stage_channels: [usize; 4],
    pub use_depth_branch: bool,
    /// Side of the per-stage crop window, in stage cells.
    pub crop_cells: usize,
    pub decoder_channels: usize,
    pub pose_hidden: usize,
    /// Input pixels per heatmap cell.
    pub heatmap_stride: usize,
    /// Radius (input pixels) of the positive ball around each annotated centre.
    pub r_ball: f64,
    pub nms_threshold: f64,
    pub nms_window: usize,
    pub max_peaks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64×64 configuration used for the synthetic benchmark.
    pub fn desk() -> Self {
        ModelConfig {
            input_size: 64,
            stage_channels: [8, 16, 32, 64],
            use_depth_branch: true,
            crop_cells: 3,
            decoder_channels: 16,
            pose_hidden: 32,
            heatmap_stride: 2,
            r_ball: 3.0,
            nms_threshold: 0.3,
            nms_window: 5,
            max_peaks: 10,
        }
    }

    /// 288×288 input with an 8-pixel ball.
    pub fn full_scale() -> Self {
        ModelConfig {
            input_size: 288,
            r_ball: 8.0,
            nms_window: 9,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input_size.is_multiple_of(16) || self.input_size < 48 {
            return Err(Error::Config(format!(
                "input_size must be a multiple of 16 and at least 48, got {}",
                self.input_size
            )));
        }
        if self.stage_channels.contains(&0) || self.stage_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "stage_channels must be positive and ascending, got {:?}",
                self.stage_channels
            )));
        }
        if self.crop_cells.is_multiple_of(2) || self.crop_cells > self.stage_size(4) {
            return Err(Error::Config(format!(
                "crop_cells must be odd and fit the last stage ({}×{}), got {}",
                self.stage_size(4),
                self.stage_size(4),
                self.crop_cells
            )));
        }
        if self.heatmap_stride != 2 {
            return Err(Error::Config(
                "heatmap_stride is fixed at 2 by the decoder layout".into(),
            ));
        }
        if self.decoder_channels == 0 || self.pose_hidden == 0 || self.max_peaks == 0 {
            return Err(Error::Config(
                "layer widths and max_peaks must be positive".into(),
            ));
        }
        if !(self.r_ball > 0.0) {
            return Err(Error::Config("r_ball must be positive".into()));
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold < 1.0)
            || self.nms_window.is_multiple_of(2)
        {
            return Err(Error::Config(
                "nms_threshold must be in (0, 1) and nms_window odd".into(),
            ));
        }
        Ok(())
    }

    /// Spatial side of stage `k` (1-based).
    pub fn stage_size(&self, k: usize) -> usize {
        self.input_size >> k
    }

    pub fn heatmap_size(&self) -> usize {
        self.input_size / self.heatmap_stride
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
