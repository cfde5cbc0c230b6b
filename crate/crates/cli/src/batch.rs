//! Batch pruning of a whole trajectory log.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use dgv_core::config::keep_floor;
use dgv_core::pruner::flip_count;
use dgv_core::{prune_pipeline, FrameObservation, PipelineConfig, PruneMask, PruneOutcome, TokenRecord};
use dgv_harness::oracle_prune;
use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::export::{export_cloud, ExportFormat};
use crate::logio::{create, read_frames, write_json};

pub const MASKS_FILE: &str = "masks.txt";
pub const TOKENS_FILE: &str = "tokens.csv";
pub const VOXELS_FILE: &str = "voxels.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PruneOptions {
    pub oracle_check: bool,
    pub export: Option<ExportFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: u64,
    pub tokens: usize,
    pub anchored: usize,
    pub selected: usize,
    pub completed: usize,
    pub kept: usize,
    pub floor: usize,
    pub kept_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub config: PipelineConfig,
    pub frames: usize,
    pub observed_tokens: usize,
    pub kept_tokens: usize,
    pub reduction_ratio: f64,
    pub occupied_voxels: usize,
    pub flips_before_smoothing: usize,
    pub flips_after_smoothing: usize,
    pub oracle_match: Option<bool>,
    pub per_frame: Vec<FrameMetrics>,
}

/// One surviving token; anchor and cell columns are empty when anchorless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub frame_id: u64,
    pub token_index: u32,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub range: f64,
    pub ix: Option<i64>,
    pub iy: Option<i64>,
    pub iz: Option<i64>,
    pub band: Option<u8>,
    pub scale_exp: Option<i32>,
}

impl From<&TokenRecord> for TokenRow {
    fn from(t: &TokenRecord) -> Self {
        Self {
            frame_id: t.frame_id,
            token_index: t.token_index,
            x: t.anchor.map(|a| a.x),
            y: t.anchor.map(|a| a.y),
            z: t.anchor.map(|a| a.z),
            range: t.range,
            ix: t.voxel.map(|v| v.ix),
            iy: t.voxel.map(|v| v.iy),
            iz: t.voxel.map(|v| v.iz),
            band: t.voxel.map(|v| v.level.band),
            scale_exp: t.voxel.map(|v| v.level.scale_exp),
        }
    }
}

/// One occupied cell with its center and how many tokens it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelRow {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
    pub band: u8,
    pub scale_exp: i32,
    pub size: f64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub tokens: usize,
    pub kept: usize,
}

fn violation(name: &str, detail: String) -> CliError {
    CliError::Invariant(format!("{name}: {detail}"))
}

/// Occupancy, keep floor and pinned retention on a finished run.
pub fn check_invariants(outcome: &PruneOutcome, cfg: &PipelineConfig) -> CliResult<()> {
    for (voxel, keys) in outcome.grid.cells() {
        let represented = keys
            .iter()
            .any(|k| outcome.selected[&k.frame_id].bits[k.token_index as usize]);
        if !represented {
            return Err(violation("occupancy", format!("cell {voxel:?} lost every token")));
        }
    }
    for mask in outcome.masks.values() {
        let floor = keep_floor(cfg.completion.rho, mask.len());
        if mask.kept() < floor {
            return Err(violation(
                "keep-ratio floor",
                format!("frame {} keeps {} of {}, floor {floor}", mask.frame_id, mask.kept(), mask.len()),
            ));
        }
        if mask.pinned.iter().zip(&mask.bits).any(|(&p, &b)| p && !b) {
            return Err(violation(
                "anchorless retention",
                format!("frame {} dropped a token without depth", mask.frame_id),
            ));
        }
    }
    Ok(())
}

fn metrics(outcome: &PruneOutcome, cfg: &PipelineConfig) -> Vec<FrameMetrics> {
    outcome
        .masks
        .values()
        .map(|m| {
            let id = m.frame_id;
            FrameMetrics {
                frame_id: id,
                tokens: m.len(),
                anchored: outcome.tokens[&id].iter().filter(|t| t.is_anchored()).count(),
                selected: outcome.selected[&id].kept(),
                completed: outcome.completed[&id].kept(),
                kept: m.kept(),
                floor: keep_floor(cfg.completion.rho, m.len()),
                kept_fraction: m.kept_fraction(),
            }
        })
        .collect()
}

fn write_masks(path: &Path, masks: &[&PruneMask]) -> CliResult<()> {
    let mut w = create(path)?;
    for m in masks {
        writeln!(w, "{} {}", m.frame_id, m.to_bit_string())?;
    }
    w.flush()?;
    Ok(())
}

fn write_tables(out: &Path, outcome: &PruneOutcome, cfg: &PipelineConfig) -> CliResult<()> {
    let mut tokens = csv::Writer::from_writer(create(&out.join(TOKENS_FILE))?);
    let preserved = outcome.preserved_tokens();
    for t in &preserved {
        tokens.serialize(TokenRow::from(*t))?;
    }
    tokens.flush()?;

    let kept: BTreeSet<_> = preserved.iter().map(|t| t.key()).collect();
    let mut voxels = csv::Writer::from_writer(create(&out.join(VOXELS_FILE))?);
    for (v, keys) in outcome.grid.cells() {
        let center = v.center(&cfg.voxel);
        voxels.serialize(VoxelRow {
            ix: v.ix,
            iy: v.iy,
            iz: v.iz,
            band: v.level.band,
            scale_exp: v.level.scale_exp,
            size: cfg.voxel.cell_size(v.level),
            cx: center.x,
            cy: center.y,
            cz: center.z,
            tokens: keys.len(),
            kept: keys.iter().filter(|k| kept.contains(k)).count(),
        })?;
    }
    voxels.flush()?;
    Ok(())
}

/// Prunes in-memory frames, checks invariants and optionally diffs against
/// the brute-force oracle. Writes nothing.
pub fn prune_frames(
    frames: &[FrameObservation],
    cfg: &PipelineConfig,
    oracle_check: bool,
) -> CliResult<(PruneOutcome, PruneReport)> {
    let outcome = prune_pipeline(frames, cfg)?;
    check_invariants(&outcome, cfg)?;

    let oracle_match = if oracle_check {
        let reference = oracle_prune(frames, cfg)?;
        for (id, mask) in &outcome.masks {
            if reference.get(id) != Some(&mask.bits) {
                return Err(violation("oracle equivalence", format!("frame {id} differs from the reference")));
            }
        }
        if reference.len() != outcome.masks.len() {
            return Err(violation("oracle equivalence", "frame sets differ".into()));
        }
        Some(true)
    } else {
        None
    };

    let per_frame = metrics(&outcome, cfg);
    let observed: usize = per_frame.iter().map(|m| m.tokens).sum();
    let kept: usize = per_frame.iter().map(|m| m.kept).sum();
    let completed: Vec<PruneMask> = outcome.completed.values().cloned().collect();
    let smoothed: Vec<PruneMask> = outcome.masks.values().cloned().collect();
    let report = PruneReport {
        config: cfg.clone(),
        frames: frames.len(),
        observed_tokens: observed,
        kept_tokens: kept,
        reduction_ratio: if observed == 0 { 1.0 } else { kept as f64 / observed as f64 },
        occupied_voxels: outcome.grid.len(),
        flips_before_smoothing: flip_count(&completed),
        flips_after_smoothing: flip_count(&smoothed),
        oracle_match,
        per_frame,
    };
    Ok((outcome, report))
}

/// Reads a log, prunes it and writes masks, surviving tokens, occupied
/// voxels and a metrics report into `out`.
pub fn run_prune(manifest: &Path, cfg: &PipelineConfig, out: &Path, opts: &PruneOptions) -> CliResult<PruneReport> {
    let frames = read_frames(manifest)?;
    info!("pruning {} frames from {}", frames.len(), manifest.display());
    let (outcome, report) = prune_frames(&frames, cfg, opts.oracle_check)?;
    debug!(
        "kept {} of {} tokens in {} cells",
        report.kept_tokens, report.observed_tokens, report.occupied_voxels
    );

    std::fs::create_dir_all(out)?;
    let masks: Vec<&PruneMask> = outcome.masks.values().collect();
    write_masks(&out.join(MASKS_FILE), &masks)?;
    write_tables(out, &outcome, cfg)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    if let Some(format) = opts.export {
        export_cloud(out, format)?;
    }
    Ok(report)
}
