use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dgv_cli::batch::{check_invariants, prune_frames, run_prune, PruneOptions, PruneReport};
use dgv_cli::export::{export_cloud, ExportFormat};
use dgv_cli::stream::{run_stream, StepRecord, StreamOptions};
use dgv_cli::CliError;
use dgv_core::format::{encode_tensors, Tensors};
use dgv_core::{prune_pipeline, PipelineConfig, SelectionRule};
use dgv_harness::oracle_prune;
use dgv_harness::scenarios::{corridor, loop_room, wall};
use nalgebra::DMatrix;
use tempfile::TempDir;

fn dgv(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dgv")).args(args).output().unwrap()
}

fn corridor_log(dir: &Path, frames: usize) -> PathBuf {
    corridor(frames, 1).generate().unwrap().write_log(&dir.join("log")).unwrap()
}

fn read_report(dir: &Path) -> PruneReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn corridor_report_meets_floor_and_matches_reference() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 20);
    let cfg = PipelineConfig::default();
    let out = tmp.path().join("run");
    let report = run_prune(&manifest, &cfg, &out, &PruneOptions::default()).unwrap();
    assert!(report.reduction_ratio < 1.0);
    for f in &report.per_frame {
        assert!(f.kept_fraction >= cfg.completion.rho, "frame {}", f.frame_id);
    }
    let frames = dgv_core::format::read_log(&manifest).unwrap();
    let reference = oracle_prune(&frames, &cfg).unwrap();
    let masks = fs::read_to_string(out.join("masks.txt")).unwrap();
    for line in masks.lines() {
        let (id, bits) = line.split_once(' ').unwrap();
        let expected: String = reference[&id.parse::<u64>().unwrap()]
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        assert_eq!(bits, expected);
    }
    assert_eq!(read_report(&out), report);
}

#[test]
fn full_keep_ratio_keeps_everything() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 6);
    let mut cfg = PipelineConfig::default();
    cfg.completion.rho = 1.0;
    let report = run_prune(&manifest, &cfg, &tmp.path().join("run"), &PruneOptions::default()).unwrap();
    assert_eq!(report.reduction_ratio, 1.0);
    assert_eq!(report.kept_tokens, report.observed_tokens);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 4);
    let m = manifest.to_str().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();

    let empty = tmp.path().join("empty.toml");
    fs::write(&empty, "version = 1\nframes = []\n").unwrap();
    assert_eq!(dgv(&["prune", "--manifest", empty.to_str().unwrap(), "--out", o]).status.code(), Some(3));

    assert_eq!(dgv(&["prune", "--manifest", m, "--out", o, "--rho", "1.5"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[voxel]\nbase_size = 0.2\nsurprise = 1\n").unwrap();
    let bad_cfg = dgv(&["prune", "--manifest", m, "--out", o, "--config", bad.to_str().unwrap()]);
    assert_eq!(bad_cfg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_cfg.stderr).contains("surprise"));

    let broken = tmp.path().join("log").join("frame_000002.dgvt");
    let bytes = fs::read(&broken).unwrap();
    fs::write(&broken, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(dgv(&["prune", "--manifest", m, "--out", o]).status.code(), Some(3));
    assert_eq!(dgv(&["stream", "--manifest", m, "--out", o]).status.code(), Some(3));

    assert_eq!(dgv(&["export", "--out", tmp.path().join("none").to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(CliError::Invariant("x".into()).exit_code(), 4);
}

#[test]
fn tampered_selection_is_an_invariant_violation() {
    let frames = corridor(5, 2).generate().unwrap().frames;
    let cfg = PipelineConfig::default();
    let mut outcome = prune_pipeline(&frames, &cfg).unwrap();
    check_invariants(&outcome, &cfg).unwrap();
    let (_, keys) = outcome.grid.cells().next().unwrap();
    for k in keys {
        outcome.selected.get_mut(&k.frame_id).unwrap().bits[k.token_index as usize] = false;
    }
    let err = check_invariants(&outcome, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("occupancy"));
}

#[test]
fn oracle_check_flag() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 8);
    let out = tmp.path().join("run");
    let status = dgv(&[
        "prune",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--oracle-check",
        "--rule",
        "priority:0.6,0.4",
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let report = read_report(&out);
    assert_eq!(report.oracle_match, Some(true));
    assert_eq!(
        report.config.selection,
        SelectionRule::Priority {
            w_recency: 0.6,
            w_proximity: 0.4
        }
    );
}

#[test]
fn report_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 8);
    let mut cfg = PipelineConfig::default();
    cfg.completion.rho = 0.3;
    cfg.selection = SelectionRule::MultiToken { k: 3 };
    let first = run_prune(&manifest, &cfg, &tmp.path().join("a"), &PruneOptions::default()).unwrap();
    let cfg_file = tmp.path().join("echo.toml");
    fs::write(&cfg_file, first.config.to_toml()).unwrap();
    let b = tmp.path().join("b");
    let out = dgv(&[
        "prune",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--config",
        cfg_file.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for f in ["masks.txt", "tokens.csv", "voxels.csv", "report.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

fn steps(dir: &Path) -> Vec<StepRecord> {
    fs::read_to_string(dir.join("budget.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn stream_window_and_single_frame() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 10);
    let cfg = PipelineConfig::default();
    let s = run_stream(&manifest, &cfg, &tmp.path().join("s"), &StreamOptions::default()).unwrap();
    assert_eq!(s.steps.len(), 10);
    assert_eq!(s.steps[9].budget.active_frames, 8);
    assert_eq!(steps(&tmp.path().join("s")), s.steps);

    let one = corridor(1, 1).generate().unwrap().write_log(&tmp.path().join("one")).unwrap();
    let s = run_stream(&one, &cfg, &tmp.path().join("s1"), &StreamOptions::default()).unwrap();
    let b = &s.steps[0].budget;
    assert_eq!((b.active_frames, b.memory_tokens), (1, 0));
}

#[test]
fn loop_memory_grows_then_plateaus() {
    let tmp = TempDir::new().unwrap();
    let t = loop_room(160, 5, 0).generate().unwrap();
    let manifest = t.write_log(&tmp.path().join("log")).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.selection = SelectionRule::DEFAULT_PRIORITY;
    let s = run_stream(&manifest, &cfg, &tmp.path().join("s"), &StreamOptions::default()).unwrap();
    let mem: Vec<usize> = s.steps.iter().map(|r| r.budget.memory_tokens).collect();
    assert!(mem.windows(2).all(|w| w[0] <= w[1]), "{mem:?}");
    // one lap is 32 frames; after two laps plus the window nothing new appears
    let tail = &mem[80..];
    assert!(tail.iter().all(|&m| m == tail[0]), "{tail:?}");
    assert!(s.steps.iter().all(|r| r.budget.memory_tokens <= r.budget.occupied_voxels));
}

#[test]
fn resumed_stream_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let manifest = corridor_log(tmp.path(), 16);
    let mut cfg = PipelineConfig::default();
    cfg.memory.window = 4;
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    run_stream(&manifest, &cfg, &full, &StreamOptions::default()).unwrap();
    let first = StreamOptions {
        resume: false,
        stop_after: Some(7),
    };
    assert_eq!(run_stream(&manifest, &cfg, &part, &first).unwrap().steps.len(), 7);
    let rest = StreamOptions {
        resume: true,
        stop_after: None,
    };
    assert_eq!(run_stream(&manifest, &cfg, &part, &rest).unwrap().steps.len(), 9);
    for f in ["budget.jsonl", "session.json"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f}");
    }

    let mut other = cfg.clone();
    other.memory.window = 5;
    assert!(matches!(run_stream(&manifest, &other, &part, &rest), Err(CliError::Config(_))));
}

#[test]
fn export_of_empty_and_single_token_runs() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path();
    fs::write(run.join("tokens.csv"), "").unwrap();
    fs::write(run.join("voxels.csv"), "").unwrap();
    let s = export_cloud(run, ExportFormat::Ply).unwrap();
    assert_eq!((s.anchors, s.voxels), (0, 0));
    let ply = fs::read_to_string(run.join("anchors.ply")).unwrap();
    assert!(ply.contains("element vertex 0\n"));
    assert!(ply.ends_with("end_header\n"));

    fs::write(
        run.join("tokens.csv"),
        "frame_id,token_index,x,y,z,range,ix,iy,iz,band,scale_exp\n4,0,1.0,2.0,3.0,3.7,4,8,12,1,0\n4,1,,,,0.0,,,,,\n",
    )
    .unwrap();
    export_cloud(run, ExportFormat::Ply).unwrap();
    let ply = fs::read_to_string(run.join("anchors.ply")).unwrap();
    let body: Vec<&str> = ply.split("end_header\n").nth(1).unwrap().lines().collect();
    assert_eq!(body, vec!["1 2 3"]);
    export_cloud(run, ExportFormat::PlyFrame).unwrap();
    let ply = fs::read_to_string(run.join("anchors.ply")).unwrap();
    assert!(ply.ends_with("1 2 3 4\n"));
}

#[test]
fn wall_anchors_lie_on_the_wall() {
    let tmp = TempDir::new().unwrap();
    let t = wall(3, 0).generate().unwrap();
    let manifest = t.write_log(&tmp.path().join("log")).unwrap();
    let cfg = PipelineConfig::default();
    let run = tmp.path().join("run");
    run_prune(&manifest, &cfg, &run, &PruneOptions {
        oracle_check: false,
        export: Some(ExportFormat::Ply),
    })
    .unwrap();
    let ply = fs::read_to_string(run.join("anchors.ply")).unwrap();
    let body = ply.split("end_header\n").nth(1).unwrap();
    let mut n = 0;
    for line in body.lines() {
        let p: Vec<f64> = line.split(' ').map(|v| v.parse().unwrap()).collect();
        let q = nalgebra::Vector3::new(p[0], p[1], p[2]);
        let size = cfg.voxel.base_size * 4.0;
        assert!(t.scene.surface_distance(&q, 0) <= size, "{line}");
        n += 1;
    }
    assert!(n > 0);

    // stream sessions export too
    let st = tmp.path().join("st");
    run_stream(&manifest, &cfg, &st, &StreamOptions::default()).unwrap();
    assert!(export_cloud(&st, ExportFormat::PlyFrame).unwrap().anchors > 0);
}

#[test]
fn attend_command_writes_output() {
    let tmp = TempDir::new().unwrap();
    let eye = DMatrix::<f64>::identity(4, 4);
    let mut w = Tensors::new();
    for name in ["w_q", "w_k", "w_v", "w_o"] {
        w.insert(name.into(), eye.clone());
    }
    w.insert("align".into(), DMatrix::from_fn(3, 4, |i, j| if i == j { 1.0 } else { 0.0 }));
    let mut input = Tensors::new();
    input.insert("query".into(), DMatrix::from_element(2, 4, 0.5));
    input.insert("context".into(), DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
    let (wp, ip, op) = (tmp.path().join("w.dgvw"), tmp.path().join("i.dgvw"), tmp.path().join("o.dgvw"));
    fs::write(&wp, encode_tensors(&w).unwrap()).unwrap();
    fs::write(&ip, encode_tensors(&input).unwrap()).unwrap();
    let out = dgv(&[
        "attend",
        "--weights",
        wp.to_str().unwrap(),
        "--input",
        ip.to_str().unwrap(),
        "--out",
        op.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = dgv_core::format::decode_tensors(&fs::read(&op).unwrap()).unwrap();
    // a single key gets all the weight, so every query reads the aligned context
    let o = &t["output"];
    for i in 0..2 {
        assert_eq!(o.row(i).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 0.0]);
    }
    assert_eq!(t.len(), 5);
}

#[test]
fn generate_command_writes_a_log() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let r = dgv(&["generate", "--scenario", "loop", "--frames", "12", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let frames = dgv_core::format::read_log(&out.join("manifest.toml")).unwrap();
    assert_eq!(frames.len(), 12);
    let (_, report) = prune_frames(&frames, &PipelineConfig::default(), true).unwrap();
    assert_eq!(report.oracle_match, Some(true));
}
