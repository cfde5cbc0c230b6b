//! Synthetic box-world trajectories and a brute-force pruning reference.
//!
//! [`scene`] ray-casts exact depth against axis-aligned boxes, [`trajectory`]
//! renders camera paths into frames with seeded token features, and
//! [`oracle`] recomputes batch pruning masks without touching the
//! production pruner.

pub mod oracle;
pub mod scenarios;
pub mod scene;
pub mod trajectory;

pub use oracle::oracle_prune;
pub use scene::{Aabb, Obstacle, Oscillation, SyntheticScene};
pub use trajectory::{generate, CameraSpec, SyntheticTrajectory, Waypoint};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("waypoint {index} is outside free space")]
    WaypointOutOfBounds { index: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("{frames} frames / {tokens} tokens exceed the oracle bound")]
    ScaleExceeded { frames: usize, tokens: usize },
    #[error(transparent)]
    Core(#[from] dgv_core::Error),
}
