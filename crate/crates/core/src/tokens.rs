//! Per-token records: features joined with world anchors and voxel cells.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::AnchorConfig;
use crate::error::Result;
use crate::frame::FrameObservation;
use crate::geometry::{anchor_tokens, backproject_with_max};
use crate::voxelgrid::{median, quantize, ResolutionPolicy, TokenKey, VoxelIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub frame_id: u64,
    pub token_index: u32,
    pub feature: Vec<f32>,
    /// World-space anchor; `None` for tokens without valid depth.
    pub anchor: Option<Vector3<f64>>,
    /// Camera-to-anchor distance, zero when anchorless.
    pub range: f64,
    pub voxel: Option<VoxelIndex>,
}

impl TokenRecord {
    pub fn key(&self) -> TokenKey {
        TokenKey {
            frame_id: self.frame_id,
            token_index: self.token_index,
        }
    }

    pub fn is_anchored(&self) -> bool {
        self.anchor.is_some()
    }

    /// Euclidean norm of the feature vector, accumulated in index order.
    pub fn feature_norm(&self) -> f64 {
        self.feature
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Anchors every token of a frame and assigns its adaptive voxel cell.
pub fn tokenize_frame(
    frame: &FrameObservation,
    policy: &ResolutionPolicy,
    anchor: &AnchorConfig,
) -> Result<Vec<TokenRecord>> {
    frame.validate()?;
    let grid = frame.token_grid()?;
    let points = backproject_with_max(&frame.depth, &frame.intrinsics, anchor.max_depth);
    let anchors = anchor_tokens(&points, &frame.pose, &grid, anchor.mode)?;

    let ranges: Vec<f64> = anchors
        .iter()
        .filter(|a| a.anchor.is_some())
        .map(|a| a.range)
        .collect();
    let frame_median = median(&ranges).unwrap_or(0.0);

    Ok(anchors
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let voxel = a.anchor.map(|p| {
                let level = policy.level(a.range, frame_median);
                quantize(&p, policy.cell_size(level), level)
            });
            TokenRecord {
                frame_id: frame.frame_id,
                token_index: i as u32,
                feature: frame.features.row(i).to_vec(),
                anchor: a.anchor,
                range: a.range,
                voxel,
            }
        })
        .collect())
}
