//! Frame-by-frame replay through the sliding-window memory.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;

use dgv_core::memory::EvictionReport;
use dgv_core::{BudgetReport, MemoryStore, PipelineConfig};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::logio::for_each_frame;

pub const BUDGET_FILE: &str = "budget.jsonl";
pub const SESSION_FILE: &str = "session.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamOptions {
    /// Continue from `session.json` in the output directory.
    pub resume: bool,
    /// Process at most this many new frames, then save the session.
    pub stop_after: Option<usize>,
}

/// One line of `budget.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub budget: BudgetReport,
    pub evicted_frame: Option<u64>,
    pub stored: usize,
    pub dropped: usize,
    pub replaced: usize,
}

impl StepRecord {
    fn new(budget: BudgetReport, ev: EvictionReport) -> Self {
        Self {
            budget,
            evicted_frame: ev.evicted_frame,
            stored: ev.stored,
            dropped: ev.dropped,
            replaced: ev.replaced,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamSummary {
    pub steps: Vec<StepRecord>,
    pub store: MemoryStore,
}

pub fn load_session(path: &Path) -> CliResult<MemoryStore> {
    let text = fs::read_to_string(path).map_err(|_| CliError::NoRunData(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_session(path: &Path, store: &MemoryStore) -> CliResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, store)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Feeds frames through `store` and returns one record per processed frame.
pub fn stream_frames<'a>(
    store: &mut MemoryStore,
    frames: impl IntoIterator<Item = &'a dgv_core::FrameObservation>,
) -> CliResult<Vec<StepRecord>> {
    frames
        .into_iter()
        .map(|f| {
            let ev = store.advance(f)?;
            Ok(StepRecord::new(store.budget_report(), ev))
        })
        .collect()
}

/// Replays a log through the memory store, appending a budget record per
/// frame to `budget.jsonl` and saving the store to `session.json`.
pub fn run_stream(manifest: &Path, cfg: &PipelineConfig, out: &Path, opts: &StreamOptions) -> CliResult<StreamSummary> {
    fs::create_dir_all(out)?;
    let session_path = out.join(SESSION_FILE);
    let mut store = if opts.resume {
        let store = load_session(&session_path)?;
        if store.config() != cfg {
            return Err(CliError::Config(
                "resolved config differs from the one stored in the session".into(),
            ));
        }
        info!("resuming after frame {:?}", store.last_frame_id());
        store
    } else {
        MemoryStore::new(cfg.clone())?
    };
    let resume_after = store.last_frame_id();

    let budget = OpenOptions::new()
        .create(true)
        .write(true)
        .append(opts.resume)
        .truncate(!opts.resume)
        .open(out.join(BUDGET_FILE))?;
    let mut budget = BufWriter::new(budget);

    let mut steps = Vec::new();
    let limit = opts.stop_after.unwrap_or(usize::MAX);
    for_each_frame(manifest, |frame| {
        if resume_after.is_some_and(|last| frame.frame_id <= last) {
            return Ok(ControlFlow::Continue(()));
        }
        if steps.len() >= limit {
            return Ok(ControlFlow::Break(()));
        }
        let ev = store.advance(&frame)?;
        let step = StepRecord::new(store.budget_report(), ev);
        debug!(
            "frame {}: {} active, {} in memory",
            frame.frame_id, step.budget.active_tokens, step.budget.memory_tokens
        );
        serde_json::to_writer(&mut budget, &step)?;
        budget.write_all(b"\n")?;
        steps.push(step);
        Ok(ControlFlow::Continue(()))
    })?;
    budget.flush()?;
    save_session(&session_path, &store)?;
    Ok(StreamSummary { steps, store })
}
