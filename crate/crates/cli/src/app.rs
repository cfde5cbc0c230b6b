//! Argument parsing and subcommand dispatch for the `dgv` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dgv_core::SelectionRule;
use dgv_harness::scenarios::{self, Scenario};
use dgv_harness::CameraSpec;
use log::info;

use crate::attend::run_attend;
use crate::batch::{run_prune, PruneOptions};
use crate::error::CliResult;
use crate::export::{export_cloud, ExportFormat};
use crate::settings::{parse_rule, resolve_config, Overrides};
use crate::stream::{run_stream, StreamOptions};

#[derive(Debug, Parser)]
#[command(name = "dgv", version, about = "Voxel-grounded token pruning and streaming memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML pipeline config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Selection rule: latest, priority[:w_recency,w_proximity] or multi:K.
    #[arg(long, value_parser = parse_rule)]
    pub rule: Option<SelectionRule>,
    /// Minimum keep ratio per frame.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Number of active frames kept whole by the memory.
    #[arg(long)]
    pub window: Option<usize>,
    /// Temporal smoothing window (odd).
    #[arg(long)]
    pub smooth: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<dgv_core::PipelineConfig> {
        let overrides = Overrides {
            rule: self.rule,
            rho: self.rho,
            window: self.window,
            smooth: self.smooth,
        };
        resolve_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    Wall,
    Corridor,
    Loop,
    Dynamic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CameraKind {
    Small,
    Standard,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune a whole trajectory log and write masks, tables and a report.
    Prune {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write PLY point clouds into the output directory.
        #[arg(long)]
        export: Option<ExportFormat>,
        /// Recompute the masks with the brute-force reference and compare.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Replay a log through the sliding-window memory.
    Stream {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the session saved in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many new frames and save the session.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Write PLY point clouds for a finished run directory.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Ply)]
        format: ExportFormat,
    },
    /// Render a synthetic scene to a trajectory log.
    Generate {
        #[arg(long, value_enum)]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = CameraKind::Small)]
        camera: CameraKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-attend a query against context tokens.
    Attend {
        /// Tensor container with w_q, w_k, w_v, w_o and optional align, num_heads.
        #[arg(long)]
        weights: PathBuf,
        /// Tensor container with `query` and `context`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn scenario(kind: ScenarioKind, frames: usize, seed: u64) -> Scenario {
    match kind {
        ScenarioKind::Wall => scenarios::wall(frames, seed),
        ScenarioKind::Corridor => scenarios::corridor(frames, seed),
        ScenarioKind::Loop => scenarios::loop_room(frames, 9, seed),
        ScenarioKind::Dynamic => scenarios::dynamic(frames, seed),
        ScenarioKind::Random => scenarios::random(seed),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prune {
            manifest,
            out,
            config,
            export,
            oracle_check,
        } => {
            let cfg = config.resolve()?;
            let report = run_prune(&manifest, &cfg, &out, &PruneOptions { oracle_check, export })?;
            println!(
                "kept {} of {} tokens ({:.4}) in {} voxels",
                report.kept_tokens, report.observed_tokens, report.reduction_ratio, report.occupied_voxels
            );
        }
        Command::Stream {
            manifest,
            out,
            config,
            resume,
            stop_after,
        } => {
            let cfg = config.resolve()?;
            let summary = run_stream(&manifest, &cfg, &out, &StreamOptions { resume, stop_after })?;
            if let Some(last) = summary.steps.last() {
                let b = &last.budget;
                println!(
                    "frame {}: {} active frames, {} active + {} memory tokens ({:.4})",
                    b.frame_id.unwrap_or_default(),
                    b.active_frames,
                    b.active_tokens,
                    b.memory_tokens,
                    b.reduction_ratio
                );
            }
        }
        Command::Export { out, format } => {
            let s = export_cloud(&out, format)?;
            println!("exported {} anchors and {} voxels", s.anchors, s.voxels);
        }
        Command::Generate {
            scenario: kind,
            frames,
            seed,
            camera,
            out,
        } => {
            let mut s = scenario(kind, frames, seed);
            if camera == CameraKind::Standard {
                s = s.with_camera(CameraSpec::standard());
            }
            let t = s.generate()?;
            let manifest = t.write_log(&out)?;
            info!("wrote {} frames", t.frames.len());
            println!("{}", manifest.display());
        }
        Command::Attend {
            weights,
            input,
            out,
            config,
        } => {
            let cfg = resolve_config(config.as_deref(), &Overrides::default())?;
            let t = run_attend(&weights, &input, &out, &cfg.fusion)?;
            let o = &t["output"];
            println!("wrote {}x{} fused tokens", o.nrows(), o.ncols());
        }
    }
    Ok(())
}
