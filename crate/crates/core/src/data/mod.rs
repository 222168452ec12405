//! Video samples, augmentation, clip partitioning and dataset files.

mod dataset;
mod synth;
mod transform;

pub use dataset::{load_dataset, save_dataset, MAGIC as DATASET_MAGIC, VERSION as DATASET_VERSION};
pub use synth::{generate_synthetic, render_sample, round_to, synth_score, SynthParams, SYNTH_FRAMES};
pub use transform::{
    crop_end, flip_horizontal, partition_clips, resize_crop, spatial_transform, temporal_crop,
    unpartition_clips, CROP_COL, CROP_ROW, RESIZE_H, RESIZE_W,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Frames consumed per video.
pub const WINDOW: usize = 96;

/// One scored performance. `frames` is `[L, 3, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub frames: Tensor<f32>,
    pub score: f64,
    pub difficulty: f64,
}

impl VideoSample {
    pub fn new(id: impl Into<String>, frames: Tensor<f32>, score: f64, difficulty: f64) -> Result<Self> {
        let s = VideoSample { id: id.into(), frames, score, difficulty };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.frames.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Input(format!(
                "sample {}: frames must be [L, 3, H, W], got {shape:?}",
                self.id
            )));
        }
        if shape[0] < WINDOW {
            return Err(Error::Input(format!(
                "sample {}: {} frames, at least {WINDOW} needed",
                self.id, shape[0]
            )));
        }
        if let Some(v) = self.frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("sample {}: pixel value {v} outside [0, 1]", self.id)));
        }
        if !(self.score >= 0.0) || !self.score.is_finite() {
            return Err(Error::Input(format!("sample {}: invalid score {}", self.id, self.score)));
        }
        if !(self.difficulty > 0.0) || !self.difficulty.is_finite() {
            return Err(Error::Input(format!(
                "sample {}: difficulty must be positive, got {}",
                self.id, self.difficulty
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(H, W)` of the stored frames.
    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames.shape()[2], self.frames.shape()[3])
    }
}
