//! Adaptive-resolution quantization of token anchors and grouping by cell.
//!
//! Cell size is `base_size × frame_factor × band_scale`. The frame factor
//! follows the frame's median token range and is snapped to a power of two
//! so that every `(band, exponent)` level tag names exactly one cell size.
//! Both factors are applied multiplicatively.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame-factor exponents are clamped to `±MAX_SCALE_EXP`.
pub const MAX_SCALE_EXP: i32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameScaleMode {
    Off,
    #[default]
    MedianDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolutionPolicy {
    pub base_size: f64,
    pub frame_scale: FrameScaleMode,
    pub reference_depth: f64,
    pub band_edges: [f64; 2],
    pub band_scales: [f64; 3],
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        Self {
            base_size: 0.25,
            frame_scale: FrameScaleMode::MedianDepth,
            reference_depth: 2.0,
            band_edges: [1.5, 4.0],
            band_scales: [0.5, 1.0, 2.0],
        }
    }
}

impl ResolutionPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.base_size.is_finite() && self.base_size > 0.0) {
            return bad("base_size must be finite and > 0");
        }
        if !(self.reference_depth.is_finite() && self.reference_depth > 0.0) {
            return bad("reference_depth must be finite and > 0");
        }
        let [e0, e1] = self.band_edges;
        if !(e0.is_finite() && e1.is_finite() && e0 < e1) {
            return bad("band_edges must be finite and strictly increasing");
        }
        let [s0, s1, s2] = self.band_scales;
        if !(s0 > 0.0 && s0 < s1 && s1 < s2 && s2.is_finite()) {
            return bad("band_scales must be positive and strictly increasing");
        }
        Ok(())
    }

    pub fn band(&self, range: f64) -> u8 {
        if range < self.band_edges[0] {
            0
        } else if range < self.band_edges[1] {
            1
        } else {
            2
        }
    }

    /// Power-of-two exponent of the per-frame factor.
    pub fn scale_exponent(&self, frame_median: f64) -> i32 {
        match self.frame_scale {
            FrameScaleMode::Off => 0,
            FrameScaleMode::MedianDepth => {
                if !(frame_median.is_finite() && frame_median > 0.0) {
                    return 0;
                }
                let e = (frame_median / self.reference_depth).log2().round();
                (e as i32).clamp(-MAX_SCALE_EXP, MAX_SCALE_EXP)
            }
        }
    }

    pub fn cell_size(&self, tag: LevelTag) -> f64 {
        self.base_size * 2f64.powi(tag.scale_exp) * self.band_scales[tag.band as usize]
    }

    pub fn level(&self, range: f64, frame_median: f64) -> LevelTag {
        LevelTag {
            band: self.band(range),
            scale_exp: self.scale_exponent(frame_median),
        }
    }
}

/// Effective cell edge length for a token at `range` in a frame whose
/// median token range is `frame_median`.
pub fn effective_size(range: f64, frame_median: f64, policy: &ResolutionPolicy) -> f64 {
    policy.cell_size(policy.level(range, frame_median))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelTag {
    pub band: u8,
    pub scale_exp: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
    pub level: LevelTag,
}

pub fn quantize(anchor: &Vector3<f64>, cell_size: f64, level: LevelTag) -> VoxelIndex {
    VoxelIndex {
        ix: (anchor.x / cell_size).floor() as i64,
        iy: (anchor.y / cell_size).floor() as i64,
        iz: (anchor.z / cell_size).floor() as i64,
        level,
    }
}

impl VoxelIndex {
    pub fn center(&self, policy: &ResolutionPolicy) -> Vector3<f64> {
        let s = policy.cell_size(self.level);
        Vector3::new(
            (self.ix as f64 + 0.5) * s,
            (self.iy as f64 + 0.5) * s,
            (self.iz as f64 + 0.5) * s,
        )
    }
}

/// Median of the given ranges; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Identifies one token of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenKey {
    pub frame_id: u64,
    pub token_index: u32,
}

/// Sparse cell map. Cells are never empty and list their tokens in
/// `(frame_id, token_index)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoxelGrid {
    cells: BTreeMap<VoxelIndex, Vec<TokenKey>>,
}

impl VoxelGrid {
    pub fn group(entries: impl IntoIterator<Item = (VoxelIndex, TokenKey)>) -> Self {
        let mut cells: BTreeMap<VoxelIndex, Vec<TokenKey>> = BTreeMap::new();
        for (voxel, key) in entries {
            cells.entry(voxel).or_default().push(key);
        }
        for tokens in cells.values_mut() {
            tokens.sort_unstable();
            tokens.dedup();
        }
        Self { cells }
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &[TokenKey])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn get(&self, voxel: &VoxelIndex) -> Option<&[TokenKey]> {
        self.cells.get(voxel).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }
}
