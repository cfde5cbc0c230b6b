use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pose rotation is not orthonormal with det +1 (deviation {deviation:.3e})")]
    PoseInvalid { deviation: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("selection over an empty voxel cell")]
    EmptyCell,

    #[error("keep ratio {0} outside (0, 1]")]
    BadRatio(f64),

    #[error("mask length mismatch: expected {expected} bits, frame {frame_id} has {found}")]
    LengthMismatch {
        frame_id: u64,
        expected: usize,
        found: usize,
    },

    #[error("frame {found} does not follow frame {last}")]
    NonMonotonicFrame { last: u64, found: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed record: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
