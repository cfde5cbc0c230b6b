use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;
use std::sync::mpsc;
use std::thread;

use dgv_core::format::{manifest_frame_paths, read_frame};
use dgv_core::FrameObservation;

use crate::error::CliResult;

/// Frames queued ahead of the consumer by the decoding thread.
const DECODE_AHEAD: usize = 4;

/// Decodes the log's frames on a worker thread and hands them to `f` in
/// manifest order. Stops at the first error or when `f` breaks.
pub fn for_each_frame(
    manifest: &Path,
    mut f: impl FnMut(FrameObservation) -> CliResult<ControlFlow<()>>,
) -> CliResult<()> {
    let paths = manifest_frame_paths(manifest)?;
    thread::scope(|s| {
        let (tx, rx) = mpsc::sync_channel(DECODE_AHEAD);
        s.spawn(move || {
            for p in &paths {
                let frame = read_frame(p);
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });
        for frame in rx {
            if f(frame?)?.is_break() {
                break;
            }
        }
        Ok(())
    })
}

pub fn read_frames(manifest: &Path) -> CliResult<Vec<FrameObservation>> {
    let mut frames = Vec::new();
    for_each_frame(manifest, |f| {
        frames.push(f);
        Ok(ControlFlow::Continue(()))
    })?;
    Ok(frames)
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
