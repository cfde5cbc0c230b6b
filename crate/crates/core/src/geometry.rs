//! Pinhole back-projection and rigid camera-to-world transforms.
//!
//! Camera frame: +z forward, +x right, +y down. A [`Pose`] maps camera
//! coordinates into the shared world frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance for pose rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::ShapeMismatch(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Row-major depth image in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "depth map {width}x{height} has {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }
}

/// A depth value is usable iff it is finite and strictly positive.
pub fn depth_is_valid(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Largest deviation of `RᵀR` from identity, or of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let off = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        off.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let deviation = self.orthonormality_error();
        if deviation > ROTATION_TOLERANCE {
            return Err(Error::PoseInvalid { deviation });
        }
        Ok(())
    }

    /// `R·p + t`, evaluated row by row left to right.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let r = &self.rotation;
        let t = &self.translation;
        Vector3::new(
            r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + t.x,
            r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + t.y,
            r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + t.z,
        )
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.translation
    }
}

/// Per-pixel camera-frame points; `None` marks pixels with invalid depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Option<Vector3<f64>>>,
}

impl PointMap {
    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.points[pixel].is_some()
    }
}

pub fn backproject(depth: &DepthMap, k: &Intrinsics) -> PointMap {
    backproject_with_max(depth, k, None)
}

/// Back-projects `d · K⁻¹ (u, v, 1)ᵀ` for every valid pixel. Depths beyond
/// `max_depth` are treated as invalid when a cutoff is given.
pub fn backproject_with_max(depth: &DepthMap, k: &Intrinsics, max_depth: Option<f64>) -> PointMap {
    let mut points = Vec::with_capacity(depth.values.len());
    for v in 0..depth.height {
        let ry = (v as f64 - k.cy) / k.fy;
        for u in 0..depth.width {
            let d = depth.values[v * depth.width + u];
            let in_range = max_depth.is_none_or(|m| d <= m);
            if depth_is_valid(d) && in_range {
                let rx = (u as f64 - k.cx) / k.fx;
                points.push(Some(Vector3::new(d * rx, d * ry, d)));
            } else {
                points.push(None);
            }
        }
    }
    PointMap {
        width: depth.width,
        height: depth.height,
        points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    /// Row-major source pixel index.
    pub pixel: usize,
    pub point: Vector3<f64>,
}

/// Transforms every valid point into the world frame, in row-major pixel order.
pub fn to_world(pm: &PointMap, pose: &Pose) -> Result<Vec<WorldPoint>> {
    pose.validate()?;
    Ok(pm
        .points
        .iter()
        .enumerate()
        .filter_map(|(pixel, p)| {
            p.as_ref().map(|p| WorldPoint {
                pixel,
                point: pose.transform_point(p),
            })
        })
        .collect())
}

/// Patch layout of a frame's tokens: `cols × rows` non-overlapping patches,
/// token index is row-major over patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub cols: usize,
    pub rows: usize,
    pub patch_w: usize,
    pub patch_h: usize,
}

impl TokenGrid {
    pub fn new(width: usize, height: usize, cols: usize, rows: usize) -> Result<Self> {
        if cols == 0 || rows == 0 || width % cols != 0 || height % rows != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{cols}x{rows} patch grid does not tile a {width}x{height} image"
            )));
        }
        Ok(Self {
            cols,
            rows,
            patch_w: width / cols,
            patch_h: height / rows,
        })
    }

    /// Finds the square patch size `p` with `(w/p)·(h/p) == tokens`.
    pub fn infer_square(width: usize, height: usize, tokens: usize) -> Result<Self> {
        (1..=width.min(height))
            .filter(|p| width % p == 0 && height % p == 0)
            .find(|p| (width / p) * (height / p) == tokens)
            .map(|p| Self {
                cols: width / p,
                rows: height / p,
                patch_w: p,
                patch_h: p,
            })
            .ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "{tokens} tokens do not tile a {width}x{height} image with square patches"
                ))
            })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    /// Mean of the valid world points inside the patch.
    #[default]
    Centroid,
    /// World point of the patch's center pixel.
    CenterPixel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenAnchor {
    pub anchor: Option<Vector3<f64>>,
    /// Camera-center to anchor distance; zero when anchorless.
    pub range: f64,
}

pub fn anchor_tokens(
    pm: &PointMap,
    pose: &Pose,
    grid: &TokenGrid,
    mode: AnchorMode,
) -> Result<Vec<TokenAnchor>> {
    if grid.cols * grid.patch_w != pm.width || grid.rows * grid.patch_h != pm.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} patch grid of {}x{} patches does not tile a {}x{} point map",
            grid.cols, grid.rows, grid.patch_w, grid.patch_h, pm.width, pm.height
        )));
    }
    pose.validate()?;
    let center = pose.camera_center();
    let mut anchors = Vec::with_capacity(grid.len());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let x0 = col * grid.patch_w;
            let y0 = row * grid.patch_h;
            let anchor = match mode {
                AnchorMode::Centroid => {
                    let mut sum = Vector3::zeros();
                    let mut n = 0usize;
                    for v in y0..y0 + grid.patch_h {
                        for u in x0..x0 + grid.patch_w {
                            if let Some(p) = &pm.points[v * pm.width + u] {
                                sum += pose.transform_point(p);
                                n += 1;
                            }
                        }
                    }
                    (n > 0).then(|| sum / n as f64)
                }
                AnchorMode::CenterPixel => {
                    let u = x0 + grid.patch_w / 2;
                    let v = y0 + grid.patch_h / 2;
                    pm.points[v * pm.width + u].map(|p| pose.transform_point(&p))
                }
            };
            let range = anchor.map_or(0.0, |a| {
                let d = a - center;
                (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
            });
            anchors.push(TokenAnchor { anchor, range });
        }
    }
    Ok(anchors)
}
