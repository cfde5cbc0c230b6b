//! Camera paths through a scene, rendered to exact depth and seeded features.

use std::f64::consts::{PI, TAU};

use dgv_core::format;
use dgv_core::geometry::{DepthMap, Intrinsics, Pose};
use dgv_core::{FeatureMatrix, FrameObservation};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use crate::scene::{SurfaceId, SyntheticScene};
use crate::HarnessError;

/// Camera position and heading; yaw is measured from world +x toward +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    /// Square patch edge in pixels; one token per patch.
    pub patch: usize,
    pub intrinsics: Intrinsics,
    pub feature_dim: usize,
}

impl CameraSpec {
    /// Pinhole camera with the given horizontal field of view and the
    /// principal point at the image center.
    pub fn pinhole(width: usize, height: usize, patch: usize, hfov_deg: f64, feature_dim: usize) -> Self {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            width,
            height,
            patch,
            intrinsics: Intrinsics {
                fx: f,
                fy: f,
                cx: (width as f64 - 1.0) / 2.0,
                cy: (height as f64 - 1.0) / 2.0,
            },
            feature_dim,
        }
    }

    /// 32×24 pixels, 48 tokens of 16 dims.
    pub fn small() -> Self {
        Self::pinhole(32, 24, 4, 90.0, 16)
    }

    /// 112×112 pixels, 196 tokens of 256 dims.
    pub fn standard() -> Self {
        Self::pinhole(112, 112, 8, 90.0, 256)
    }

    pub fn tokens(&self) -> usize {
        (self.width / self.patch) * (self.height / self.patch)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.patch == 0
            || self.width % self.patch != 0
            || self.height % self.patch != 0
            || self.width == 0
            || self.height == 0
        {
            return Err(HarnessError::InvalidPath(format!(
                "{}x{} image is not tiled by {} px patches",
                self.width, self.height, self.patch
            )));
        }
        Ok(self.intrinsics.validate()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrajectory {
    pub scene: SyntheticScene,
    pub frames: Vec<FrameObservation>,
}

impl SyntheticTrajectory {
    pub fn token_count(&self) -> usize {
        self.frames.iter().map(FrameObservation::token_count).sum()
    }

    /// Writes every frame plus a manifest into `dir`; returns the manifest path.
    pub fn write_log(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        Ok(format::write_log(dir, &self.frames)?)
    }
}

/// Camera-to-world rotation for a level camera at `yaw` (world z up).
/// Columns are the camera's right, down and forward axes.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(s, 0.0, c, -c, 0.0, s, 0.0, -1.0, 0.0)
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn interpolate(a: &Waypoint, b: &Waypoint, s: f64) -> Waypoint {
    Waypoint {
        position: a.position + (b.position - a.position) * s,
        yaw: a.yaw + wrap_angle(b.yaw - a.yaw) * s,
    }
}

/// Poses along the path: each segment is sampled at `j / (n − 1)` for
/// `j = 0..n`, with the shared endpoint of consecutive segments emitted once.
pub fn sample_path(path: &[Waypoint], frames_per_segment: usize) -> Result<Vec<Waypoint>, HarnessError> {
    match path {
        [] => Err(HarnessError::InvalidPath("path has no waypoints".into())),
        _ if frames_per_segment == 0 => Err(HarnessError::InvalidPath(
            "frames per segment must be positive".into(),
        )),
        [only] => Ok(vec![*only; frames_per_segment]),
        _ if frames_per_segment < 2 => Err(HarnessError::InvalidPath(
            "a multi-waypoint path needs at least two frames per segment".into(),
        )),
        _ => {
            let n = frames_per_segment;
            let mut out = Vec::with_capacity(1 + (path.len() - 1) * (n - 1));
            out.push(path[0]);
            for seg in path.windows(2) {
                for j in 1..n {
                    out.push(interpolate(&seg[0], &seg[1], j as f64 / (n - 1) as f64));
                }
            }
            Ok(out)
        }
    }
}

fn feature_rng(seed: u64, frame_id: u64, patch: usize, surface: Option<SurfaceId>) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&frame_id.to_le_bytes());
    bytes[16..24].copy_from_slice(&(patch as u64).to_le_bytes());
    let surface = surface.map_or(u64::MAX, u64::from);
    bytes[24..].copy_from_slice(&surface.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Renders one frame: exact ray-cast depth plus per-patch seeded features.
pub fn render_frame(
    scene: &SyntheticScene,
    camera: &CameraSpec,
    pose: &Waypoint,
    frame_id: u64,
    frame_index: usize,
) -> Result<FrameObservation, HarnessError> {
    let r = yaw_rotation(pose.yaw);
    let k = &camera.intrinsics;
    let origin = pose.position;
    let (w, h) = (camera.width, camera.height);
    let ray = |u: usize, v: usize| {
        let c = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
        scene.cast(&origin, &(r * c), frame_index)
    };

    let mut depth = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            depth.push(ray(u, v).map_or(f64::INFINITY, |hit| hit.t));
        }
    }

    let (cols, rows) = (w / camera.patch, h / camera.patch);
    let mut features = Vec::with_capacity(cols * rows * camera.feature_dim);
    for row in 0..rows {
        for col in 0..cols {
            let u = col * camera.patch + camera.patch / 2;
            let v = row * camera.patch + camera.patch / 2;
            let surface = ray(u, v).map(|hit| hit.surface);
            let mut rng = feature_rng(scene.seed, frame_id, row * cols + col, surface);
            features.extend((0..camera.feature_dim).map(|_| rng.random_range(-1.0f32..1.0)));
        }
    }

    Ok(FrameObservation {
        frame_id,
        depth: DepthMap::new(w, h, depth)?,
        intrinsics: *k,
        pose: Pose::new(r, origin)?,
        features: FeatureMatrix::new(cols * rows, camera.feature_dim, features)?,
    })
}

/// Renders a camera moving along `path`. Frame ids start at 1.
pub fn generate(
    scene: &SyntheticScene,
    path: &[Waypoint],
    frames_per_segment: usize,
    camera: &CameraSpec,
) -> Result<SyntheticTrajectory, HarnessError> {
    scene.validate()?;
    camera.validate()?;
    for (index, wp) in path.iter().enumerate() {
        if !scene.is_free(&wp.position, 0) || !wp.yaw.is_finite() {
            return Err(HarnessError::WaypointOutOfBounds { index });
        }
    }
    let poses = sample_path(path, frames_per_segment)?;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, p)| render_frame(scene, camera, p, i as u64 + 1, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticTrajectory {
        scene: scene.clone(),
        frames,
    })
}
