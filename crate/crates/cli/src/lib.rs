//! `panorad`: synthesize or ingest panorama datasets, train a radiance
//! field, run multi-view stereo and serve the result.

pub mod commands;
pub mod config;
pub mod report;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use panorad_core::{Error, Result};
use panorad_server::ServeArgs;

use commands::{IngestArgs, SynthArgs};
use config::PipelineConfig;
use report::Recorder;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_PANIC: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "panorad", version, about = "Panorama reconstruction pipeline")]
pub struct Cli {
    /// Pipeline configuration TOML.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured output directory and PANORAD_OUTPUT_DIR.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to PANORAD_THREADS or all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with ground-truth depth.
    Synth(SynthArgs),
    /// Build a dataset from captured panoramas or fisheye pairs.
    Ingest(IngestArgs),
    /// Fit a radiance field.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint path; defaults to `field.pnrf` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render panoramas from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Render these dataset frames and score them.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated frame indices; all when omitted.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
        /// `w,x,y,z,tx,ty,tz`, used instead of a dataset.
        #[arg(long, allow_hyphen_values = true)]
        pose: Option<String>,
        #[arg(long, default_value_t = 512)]
        width: u32,
        /// Output directory (dataset mode) or PNG path (pose mode).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the field density into a point cloud.
    ExportCloud {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-keyframe depth maps by PatchMatch, then consistency cleaning.
    Depth {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse cleaned depth maps into one point cloud.
    Fuse {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory of cleaned depth maps.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve renders of a checkpoint over HTTP.
    Serve(ServeArgs),
    /// Run the configured stages end to end.
    Run,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Train { .. } => "train",
            Command::Render { .. } => "render",
            Command::ExportCloud { .. } => "export-cloud",
            Command::Depth { .. } => "depth",
            Command::Fuse { .. } => "fuse",
            Command::Serve(_) => "serve",
            Command::Run => "run",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::Image(image::ImageError::IoError(_)) => EXIT_IO,
        _ => EXIT_DATA,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn with_dataset(cfg: &mut PipelineConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(d) = flag {
        cfg.dataset = Some(d.clone());
    }
    cfg.require_dataset().map(Path::to_path_buf)
}

fn dispatch(cli: &Cli, cfg: &mut PipelineConfig, out_dir: &Path, rec: &mut Recorder) -> Result<()> {
    let name = cli.command.name();
    match &cli.command {
        Command::Synth(a) => rec.stage(name, |r| commands::synth(a, r)).map(drop),
        Command::Ingest(a) => rec.stage(name, |r| commands::ingest(a, r)).map(drop),
        Command::Train { dataset, out } => {
            let ds = with_dataset(cfg, dataset)?;
            let out = out
                .clone()
                .unwrap_or_else(|| commands::RunLayout::new(out_dir).checkpoint);
            ensure_parent(&out)?;
            rec.stage(name, |r| commands::train(cfg, &ds, &out, r)).map(drop)
        }
        Command::Render {
            checkpoint,
            dataset,
            frames,
            pose,
            width,
            out,
        } => match (pose, dataset) {
            (Some(pose), _) => {
                let pose = commands::parse_pose(pose)?;
                let out = out.clone().unwrap_or_else(|| out_dir.join("render.png"));
                ensure_parent(&out)?;
                rec.stage(name, |r| commands::render_pose(cfg, checkpoint, &pose, *width, &out, r))
            }
            (None, dataset) => {
                let ds = with_dataset(cfg, dataset)?;
                let out = out.clone().unwrap_or_else(|| commands::RunLayout::new(out_dir).renders);
                rec.stage(name, |r| {
                    commands::render_dataset(cfg, checkpoint, &ds, frames, &out, r)
                })
                .map(|m| {
                    for v in m {
                        log::info!("frame {} psnr {:.2} dB", v.frame, v.psnr);
                    }
                })
            }
        },
        Command::ExportCloud { checkpoint, out } => {
            let out = out
                .clone()
                .unwrap_or_else(|| commands::RunLayout::new(out_dir).nerf_cloud);
            ensure_parent(&out)?;
            rec.stage(name, |r| commands::export_cloud(cfg, checkpoint, &out, r))
                .map(drop)
        }
        Command::Depth { dataset, out } => {
            let ds = with_dataset(cfg, dataset)?;
            let out = out.clone().unwrap_or_else(|| commands::RunLayout::new(out_dir).depth);
            rec.stage(name, |r| commands::depth(cfg, &ds, &out, r)).map(drop)
        }
        Command::Fuse { dataset, depth, out } => {
            let ds = with_dataset(cfg, dataset)?;
            let layout = commands::RunLayout::new(out_dir);
            let depth = depth.clone().unwrap_or(layout.depth);
            let out = out.clone().unwrap_or(layout.stereo_cloud);
            ensure_parent(&out)?;
            rec.stage(name, |r| commands::fuse(cfg, &ds, &depth, &out, r)).map(drop)
        }
        Command::Serve(a) => panorad_server::serve(a),
        Command::Run => commands::run(cfg, out_dir, rec),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

/// Where the run report for `cli` goes.
fn report_dir(cli: &Cli, cfg: &PipelineConfig) -> PathBuf {
    match &cli.command {
        Command::Synth(a) => a.out.clone(),
        Command::Ingest(a) => a.out.clone(),
        _ => config::resolve_output_dir(cli.output_dir.as_deref(), cfg),
    }
}

/// Run `cli` and return the process exit code. Every invocation except
/// `serve` appends a report, including failed ones.
pub fn execute(cli: &Cli) -> i32 {
    let start = Instant::now();
    let mut cfg = match load_config(cli) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            // only report where the caller named a directory explicitly
            let dir = cli
                .output_dir
                .clone()
                .or_else(|| std::env::var_os(config::OUTPUT_DIR_ENV).map(PathBuf::from));
            if let Some(dir) = dir {
                let rec = Recorder::new(cli.command.name(), start);
                let _ = report::append(&rec.finish(String::new(), Some(e.to_string())), &dir);
            }
            return exit_code(&e);
        }
    };
    let out_dir = report_dir(cli, &cfg);
    let mut rec = Recorder::new(cli.command.name(), start);
    let outcome = catch_unwind(AssertUnwindSafe(|| dispatch(cli, &mut cfg, &out_dir, &mut rec)));
    let (code, error) = match outcome {
        Ok(Ok(())) => (EXIT_OK, None),
        Ok(Err(e)) => {
            log::error!("{e}");
            (exit_code(&e), Some(e.to_string()))
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            log::error!("internal error: {msg}");
            (EXIT_PANIC, Some(format!("panic: {msg}")))
        }
    };
    if !matches!(cli.command, Command::Serve(_)) {
        let report = rec.finish(cfg.hash(), error);
        if let Err(e) = report::append(&report, &out_dir) {
            log::warn!("could not write run report: {e}");
        }
    }
    code
}
