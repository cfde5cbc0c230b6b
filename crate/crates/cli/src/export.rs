//! ASCII PLY export of surviving anchors and occupied voxel centers.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;

use crate::batch::{TokenRow, VoxelRow, TOKENS_FILE, VOXELS_FILE};
use crate::error::{CliError, CliResult};
use crate::logio::create;
use crate::stream::{load_session, SESSION_FILE};

pub const ANCHORS_PLY: &str = "anchors.ply";
pub const VOXELS_PLY: &str = "voxels.ply";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ExportFormat {
    /// `x y z` per vertex.
    #[default]
    Ply,
    /// `x y z frame_id` per anchor vertex.
    PlyFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportSummary {
    pub anchors: usize,
    pub voxels: usize,
}

/// A vertex with an optional frame id column.
pub type Vertex = ([f64; 3], Option<u64>);

/// Writes an ASCII PLY with one `x y z [frame_id]` line per vertex.
pub fn write_ply<W: Write>(mut w: W, vertices: &[Vertex], with_frame: bool) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", vertices.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if with_frame {
        writeln!(w, "property uint frame_id")?;
    }
    writeln!(w, "end_header")?;
    for ([x, y, z], frame) in vertices {
        match frame {
            Some(f) if with_frame => writeln!(w, "{x} {y} {z} {f}")?,
            _ => writeln!(w, "{x} {y} {z}")?,
        }
    }
    w.flush()
}

fn from_tables(run_dir: &Path) -> CliResult<(Vec<Vertex>, Vec<Vertex>)> {
    let mut anchors = Vec::new();
    for row in csv::Reader::from_path(run_dir.join(TOKENS_FILE))?.deserialize() {
        let t: TokenRow = row?;
        if let (Some(x), Some(y), Some(z)) = (t.x, t.y, t.z) {
            anchors.push(([x, y, z], Some(t.frame_id)));
        }
    }
    let mut voxels = Vec::new();
    for row in csv::Reader::from_path(run_dir.join(VOXELS_FILE))?.deserialize() {
        let v: VoxelRow = row?;
        voxels.push(([v.cx, v.cy, v.cz], None));
    }
    Ok((anchors, voxels))
}

fn from_session(run_dir: &Path) -> CliResult<(Vec<Vertex>, Vec<Vertex>)> {
    let store = load_session(&run_dir.join(SESSION_FILE))?;
    let snapshot = store.snapshot();
    let anchors = snapshot
        .memory
        .iter()
        .chain(&snapshot.active)
        .filter_map(|t| t.anchor.map(|a| ([a.x, a.y, a.z], Some(t.frame_id))))
        .collect();
    let policy = &store.config().voxel;
    let voxels = store
        .voxel_cells()
        .map(|(v, _)| {
            let c = v.center(policy);
            ([c.x, c.y, c.z], None)
        })
        .collect();
    Ok((anchors, voxels))
}

/// Exports a prune run (token and voxel tables) or, failing that, a stream
/// session found in `run_dir`.
pub fn export_cloud(run_dir: &Path, format: ExportFormat) -> CliResult<ExportSummary> {
    let (anchors, voxels) = if run_dir.join(TOKENS_FILE).is_file() && run_dir.join(VOXELS_FILE).is_file() {
        from_tables(run_dir)?
    } else if run_dir.join(SESSION_FILE).is_file() {
        from_session(run_dir)?
    } else {
        return Err(CliError::NoRunData(run_dir.display().to_string()));
    };
    let with_frame = format == ExportFormat::PlyFrame;
    write_ply(create(&run_dir.join(ANCHORS_PLY))?, &anchors, with_frame)?;
    write_ply(create(&run_dir.join(VOXELS_PLY))?, &voxels, false)?;
    Ok(ExportSummary {
        anchors: anchors.len(),
        voxels: voxels.len(),
    })
}
