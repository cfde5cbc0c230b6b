//! Ready-made scenes and camera paths.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{Aabb, Obstacle, Oscillation, SyntheticScene};
use crate::trajectory::{generate, CameraSpec, SyntheticTrajectory, Waypoint};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub scene: SyntheticScene,
    pub path: Vec<Waypoint>,
    pub frames_per_segment: usize,
    pub camera: CameraSpec,
    /// Keep only the first frames of the rendered path.
    pub max_frames: Option<usize>,
}

impl Scenario {
    pub fn generate(&self) -> Result<SyntheticTrajectory, HarnessError> {
        let mut t = generate(&self.scene, &self.path, self.frames_per_segment, &self.camera)?;
        if let Some(n) = self.max_frames {
            t.frames.truncate(n);
        }
        Ok(t)
    }

    pub fn with_camera(mut self, camera: CameraSpec) -> Self {
        self.camera = camera;
        self
    }
}

/// Camera 2 m in front of a wall, looking straight at it.
pub fn wall(frames: usize, seed: u64) -> Scenario {
    Scenario {
        name: "wall".into(),
        scene: SyntheticScene {
            room: Aabb::new([-2.0, -2.0, -1.5], [2.0, 2.0, 1.5]),
            obstacles: vec![],
            seed,
        },
        path: vec![Waypoint::new(0.0, 0.0, 0.0, 0.0)],
        frames_per_segment: frames,
        camera: CameraSpec::small(),
        max_frames: None,
    }
}

/// Straight walk down a long corridor with a few boxes along the walls.
pub fn corridor(frames: usize, seed: u64) -> Scenario {
    Scenario {
        name: "corridor".into(),
        scene: SyntheticScene {
            room: Aabb::new([0.0, 0.0, 0.0], [20.0, 2.5, 2.5]),
            obstacles: vec![
                Obstacle::fixed(Aabb::new([5.0, 0.0, 0.0], [6.0, 0.6, 1.0])),
                Obstacle::fixed(Aabb::new([9.0, 1.9, 0.0], [10.0, 2.5, 1.5])),
                Obstacle::fixed(Aabb::new([13.0, 0.0, 0.0], [13.5, 0.8, 2.0])),
            ],
            seed,
        },
        path: vec![
            Waypoint::new(1.0, 1.25, 1.2, 0.0),
            Waypoint::new(12.0, 1.25, 1.2, 0.1),
        ],
        frames_per_segment: frames.max(2),
        camera: CameraSpec::small(),
        max_frames: Some(frames),
    }
}

/// Repeated laps around a pillar in a closed room. Each side is a straight
/// walk followed by a quarter turn in place, so every lap renders the same
/// poses.
pub fn loop_room(total_frames: usize, frames_per_segment: usize, seed: u64) -> Scenario {
    let corners = [(1.0, 1.0), (5.0, 1.0), (5.0, 5.0), (1.0, 5.0)];
    let headings = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];
    let per_lap = 8 * (frames_per_segment.max(2) - 1);
    let laps = total_frames.div_ceil(per_lap).max(1);
    let mut path = vec![Waypoint::new(1.0, 1.0, 1.2, 0.0)];
    for _ in 0..laps {
        for side in 0..4 {
            let (x, y) = corners[(side + 1) % 4];
            path.push(Waypoint::new(x, y, 1.2, headings[side]));
            path.push(Waypoint::new(x, y, 1.2, headings[(side + 1) % 4]));
        }
    }
    Scenario {
        name: "loop".into(),
        scene: SyntheticScene {
            room: Aabb::new([0.0, 0.0, 0.0], [6.0, 6.0, 3.0]),
            obstacles: vec![
                Obstacle::fixed(Aabb::new([2.5, 2.5, 0.0], [3.5, 3.5, 3.0])),
                Obstacle::fixed(Aabb::new([0.0, 5.6, 0.0], [1.5, 6.0, 0.8])),
            ],
            seed,
        },
        path,
        frames_per_segment: frames_per_segment.max(2),
        camera: CameraSpec::small(),
        max_frames: Some(total_frames),
    }
}

/// Slow walk past boxes that oscillate across the camera's view.
pub fn dynamic(frames: usize, seed: u64) -> Scenario {
    let swing = |y, period| Oscillation {
        amplitude: Vector3::new(0.0, y, 0.0),
        period_frames: period,
    };
    Scenario {
        name: "dynamic".into(),
        scene: SyntheticScene {
            room: Aabb::new([0.0, 0.0, 0.0], [8.0, 4.0, 3.0]),
            obstacles: vec![
                Obstacle {
                    bounds: Aabb::new([4.0, 1.7, 0.0], [4.6, 2.3, 1.8]),
                    motion: Some(swing(1.2, 7.0)),
                },
                Obstacle {
                    bounds: Aabb::new([6.0, 1.5, 0.0], [6.5, 2.5, 1.2]),
                    motion: Some(swing(1.0, 4.0)),
                },
            ],
            seed,
        },
        path: vec![
            Waypoint::new(0.5, 2.0, 1.2, 0.0),
            Waypoint::new(2.5, 2.0, 1.2, 0.0),
        ],
        frames_per_segment: frames.max(2),
        camera: CameraSpec::small(),
        max_frames: Some(frames),
    }
}

fn free_point(rng: &mut ChaCha8Rng, scene: &SyntheticScene, margin: f64) -> Vector3<f64> {
    let r = &scene.room;
    loop {
        let p = Vector3::new(
            rng.random_range(r.min.x + margin..r.max.x - margin),
            rng.random_range(r.min.y + margin..r.max.y - margin),
            rng.random_range(r.min.z + margin..r.max.z - margin),
        );
        let clear = scene.obstacles.iter().all(|o| {
            let sweep = o.motion.map_or(Vector3::zeros(), |m| m.amplitude.abs());
            (0..3).any(|i| {
                p[i] < o.bounds.min[i] - sweep[i] - margin || p[i] > o.bounds.max[i] + sweep[i] + margin
            })
        });
        if clear {
            return p;
        }
    }
}

/// Random room with random boxes (static or moving) and a random path of at
/// most 50 frames on the small camera.
pub fn random(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = Vector3::new(
        rng.random_range(4.0..12.0),
        rng.random_range(3.0..8.0),
        rng.random_range(2.4..3.5),
    );
    let room = Aabb::new([0.0, 0.0, 0.0], size.into());
    let moving = rng.random_bool(0.4);
    let mut obstacles = Vec::new();
    for _ in 0..rng.random_range(0..5) {
        let ext = Vector3::new(
            rng.random_range(0.3..1.2),
            rng.random_range(0.3..1.2),
            rng.random_range(0.5..size.z),
        );
        let amp = if moving {
            Vector3::new(rng.random_range(0.0..0.5), rng.random_range(0.0..0.5), 0.0)
        } else {
            Vector3::zeros()
        };
        let lo = Vector3::new(
            rng.random_range(amp.x..size.x - ext.x - amp.x),
            rng.random_range(amp.y..size.y - ext.y - amp.y),
            0.0,
        );
        obstacles.push(Obstacle {
            bounds: Aabb {
                min: lo,
                max: lo + ext,
            },
            motion: moving.then(|| Oscillation {
                amplitude: amp,
                period_frames: rng.random_range(3.0..12.0),
            }),
        });
    }
    let scene = SyntheticScene {
        room,
        obstacles,
        seed,
    };
    let waypoints = rng.random_range(1..5usize);
    let path: Vec<Waypoint> = (0..waypoints)
        .map(|_| Waypoint {
            position: free_point(&mut rng, &scene, 0.2),
            yaw: rng.random_range(-PI..PI),
        })
        .collect();
    let total = rng.random_range(5..=50usize);
    let fps = if waypoints == 1 {
        total
    } else {
        (total / (waypoints - 1)).max(2)
    };
    Scenario {
        name: format!("random-{seed}"),
        scene,
        path,
        frames_per_segment: fps,
        camera: CameraSpec::small(),
        max_frames: Some(total),
    }
}
