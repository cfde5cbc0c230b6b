//! Library behind the `dgv` command: batch pruning, streaming replay,
//! exports and the fusion forward pass, all driven from trajectory logs.

pub mod app;
pub mod attend;
pub mod batch;
pub mod error;
pub mod export;
pub mod logio;
pub mod settings;
pub mod stream;

pub use error::{CliError, CliResult};
