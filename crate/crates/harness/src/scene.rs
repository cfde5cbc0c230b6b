//! Box-world scenes with exact ray casting.

use nalgebra::Vector3;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self {
            min: Vector3::from(min),
            max: Vector3::from(max),
        }
    }

    pub fn translated(&self, by: &Vector3<f64>) -> Self {
        Self {
            min: self.min + by,
            max: self.max + by,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    fn has_positive_extent(&self) -> bool {
        (0..3).all(|i| self.max[i] > self.min[i])
    }

    /// Distance from `p` to the nearest face of the box surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for axis in 0..3 {
            for plane in [self.min[axis], self.max[axis]] {
                let mut q = *p;
                q[axis] = plane;
                for j in 0..3 {
                    if j != axis {
                        q[j] = q[j].clamp(self.min[j], self.max[j]);
                    }
                }
                best = best.min((q - p).norm());
            }
        }
        best
    }
}

/// Sinusoidal back-and-forth motion: offset `amplitude · sin(2π f / period)`
/// at frame index `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillation {
    pub amplitude: Vector3<f64>,
    pub period_frames: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub bounds: Aabb,
    pub motion: Option<Oscillation>,
}

impl Obstacle {
    pub fn fixed(bounds: Aabb) -> Self {
        Self {
            bounds,
            motion: None,
        }
    }

    pub fn at_frame(&self, frame_index: usize) -> Aabb {
        match &self.motion {
            None => self.bounds,
            Some(m) => {
                let phase = std::f64::consts::TAU * frame_index as f64 / m.period_frames;
                self.bounds.translated(&(m.amplitude * phase.sin()))
            }
        }
    }

    fn sweep(&self) -> [Aabb; 2] {
        match &self.motion {
            None => [self.bounds; 2],
            Some(m) => [
                self.bounds.translated(&m.amplitude),
                self.bounds.translated(&-m.amplitude),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub room: Aabb,
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

/// Surface ids: room faces are `0..6` (axis·2 + max side), obstacle `i` is `6 + i`.
pub type SurfaceId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub surface: SurfaceId,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.room.has_positive_extent() {
            return Err(HarnessError::InvalidScene("room extents must be positive".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.bounds.has_positive_extent() {
                return Err(HarnessError::InvalidScene(format!(
                    "obstacle {i} has non-positive extent"
                )));
            }
            if !o.sweep().iter().all(|b| self.room.contains_box(b)) {
                return Err(HarnessError::InvalidScene(format!(
                    "obstacle {i} leaves the room"
                )));
            }
        }
        Ok(())
    }

    /// True when `p` is inside the room and outside every obstacle at `frame_index`.
    pub fn is_free(&self, p: &Vector3<f64>, frame_index: usize) -> bool {
        self.room.contains(p)
            && self
                .obstacles
                .iter()
                .all(|o| !o.at_frame(frame_index).contains(p))
    }

    /// First surface along `origin + t·dir`, `t > 0`. The origin must be free.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, frame_index: usize) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for axis in 0..3 {
            let (plane, side) = if dir[axis] > 0.0 {
                (self.room.max[axis], 1)
            } else if dir[axis] < 0.0 {
                (self.room.min[axis], 0)
            } else {
                continue;
            };
            let t = (plane - origin[axis]) / dir[axis];
            if t > 0.0 && best.is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    surface: (axis * 2 + side) as SurfaceId,
                });
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let b = o.at_frame(frame_index);
            let (mut enter, mut exit) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut missed = false;
            for axis in 0..3 {
                if dir[axis] == 0.0 {
                    if origin[axis] < b.min[axis] || origin[axis] > b.max[axis] {
                        missed = true;
                    }
                    continue;
                }
                let t0 = (b.min[axis] - origin[axis]) / dir[axis];
                let t1 = (b.max[axis] - origin[axis]) / dir[axis];
                enter = enter.max(t0.min(t1));
                exit = exit.min(t0.max(t1));
            }
            if !missed && enter <= exit && enter > 0.0 && best.is_none_or(|h| enter < h.t) {
                best = Some(Hit {
                    t: enter,
                    surface: 6 + i as SurfaceId,
                });
            }
        }
        best
    }

    /// Distance from `p` to the closest scene surface at `frame_index`.
    pub fn surface_distance(&self, p: &Vector3<f64>, frame_index: usize) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.at_frame(frame_index).surface_distance(p))
            .fold(self.room.surface_distance(p), f64::min)
    }
}
