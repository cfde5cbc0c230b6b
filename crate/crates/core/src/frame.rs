use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, Pose, TokenGrid};

/// Row-major `L × C` token feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix {rows}x{cols} has {} values",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// One timestep: depth, camera, camera-to-world pose and fused token features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_id: u64,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub features: FeatureMatrix,
}

impl FrameObservation {
    pub fn token_count(&self) -> usize {
        self.features.rows()
    }

    pub fn token_grid(&self) -> Result<TokenGrid> {
        TokenGrid::infer_square(self.depth.width(), self.depth.height(), self.features.rows())
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        self.token_grid()?;
        if self.features.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token features"));
        }
        Ok(())
    }
}
