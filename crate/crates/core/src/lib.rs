//! Streaming spatio-temporal token memory.
//!
//! Per-frame depth is back-projected into world-anchored point maps
//! ([`geometry`]), visual tokens are quantized into adaptive voxel cells
//! ([`voxelgrid`]) and pruned to per-cell representatives with a keep-ratio
//! floor and temporal smoothing ([`pruner`]). [`memory`] keeps the most recent
//! frames whole and folds evicted frames into a bounded pruned store.
//! [`fusion`] is a forward reference of the cross-attention that produces
//! the fused tokens.

pub mod config;
pub mod error;
pub mod format;
pub mod frame;
pub mod fusion;
pub mod geometry;
pub mod memory;
pub mod pruner;
pub mod tokens;
pub mod voxelgrid;

pub use config::{CompletionWeights, PipelineConfig, SelectionRule};
pub use error::{Error, Result};
pub use frame::{FeatureMatrix, FrameObservation};
pub use memory::{BudgetReport, MemoryStore};
pub use pruner::{prune_pipeline, PruneMask, PruneOutcome};
pub use tokens::TokenRecord;
