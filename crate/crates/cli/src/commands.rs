//! The pipeline stages as library functions. Each takes explicit paths and
//! a [`PipelineConfig`] and records its outputs on a [`Recorder`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use panorad_core::dataset::{parse_toml, CameraDims, Dataset, DatasetManifest, FrameRecord};
use panorad_core::geometry::{Aabb, EquirectCamera, Pose};
use panorad_core::imaging::{self, to_f32, to_u8};
use panorad_core::ingest::{
    occlusion_mask, select_frames, sharpness_of, stitch_dual_fisheye, MaskKind, RigCalibration,
};
use panorad_core::nerf::{self, checkpoint, RadianceField, TrainReport};
use panorad_core::oracle::{self, Scene, Trajectory};
use panorad_core::pointcloud::PointCloud;
use panorad_core::stereo::{self, DepthMap};
use panorad_core::{metrics, Error, Result};

use crate::config::PipelineConfig;
use crate::report::Recorder;

/// Near plane for every trained field, meters.
pub const T_NEAR: f64 = 0.05;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const POSES_FILE: &str = "poses.toml";

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Acceptance,
    Wall { textured: bool },
    File(PathBuf),
}

impl std::str::FromStr for SceneSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "acceptance" => SceneSource::Acceptance,
            "wall" => SceneSource::Wall { textured: true },
            "textureless-wall" => SceneSource::Wall { textured: false },
            other => SceneSource::File(PathBuf::from(other)),
        })
    }
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene> {
        match self {
            SceneSource::Acceptance => Ok(oracle::acceptance_room()),
            SceneSource::Wall { textured } => Ok(oracle::wall_scene(2.5, *textured)),
            SceneSource::File(p) => Scene::load(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrajectoryKind {
    /// The fixed 40-pose orbit plus lawnmower capture.
    Acceptance,
    Orbit,
    Lawnmower,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    /// `acceptance`, `wall`, `textureless-wall` or a scene TOML file.
    #[arg(long, default_value = "acceptance")]
    pub scene: SceneSource,
    #[arg(long, value_enum, default_value = "acceptance")]
    pub trajectory: TrajectoryKind,
    /// Pose count for orbit and lawnmower paths.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Vertical offset from the scene center, meters.
    #[arg(long, default_value_t = 0.0)]
    pub height: f64,
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    /// Panorama width; the height is half of it.
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    /// Rays per pixel along each axis.
    #[arg(long, default_value_t = 4)]
    pub supersample: u32,
    #[arg(long, value_enum, default_value = "none")]
    pub mask: MaskArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskArg {
    None,
    BottomThird,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::None => MaskKind::None,
            MaskArg::BottomThird => MaskKind::BottomThird,
        }
    }
}

fn frame_name(i: u64) -> String {
    format!("{i:04}.png")
}

/// Render a synthetic dataset with ground-truth depth. Returns the manifest
/// path.
pub fn synth(args: &SynthArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let scene = args.scene.load()?;
    let poses = match args.trajectory {
        TrajectoryKind::Acceptance => oracle::acceptance_trajectory(&scene)?,
        TrajectoryKind::Orbit => scene.make_trajectory(
            args.frames,
            &Trajectory::Orbit {
                radius: args.radius,
                height: args.height,
            },
        )?,
        TrajectoryKind::Lawnmower => scene.make_trajectory(
            args.frames,
            &Trajectory::Lawnmower {
                margin: args.margin,
                height: args.height,
            },
        )?,
    };
    let cam = EquirectCamera::new(args.width, args.width / 2)?;
    let mask_kind: MaskKind = args.mask.into();
    let mask = occlusion_mask(&cam, mask_kind);
    std::fs::create_dir_all(&args.out)?;
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let r = scene.render_panorama_supersampled(pose, &cam, args.supersample)?;
        let img = to_u8(&r.image);
        let path = format!("images/{}", frame_name(i as u64));
        let depth = format!("depth/{}", frame_name(i as u64));
        imaging::save_rgb(&img, &args.out.join(&path))?;
        imaging::save_depth_mm(&r.depth, cam.width(), cam.height(), &args.out.join(&depth))?;
        frames.push(FrameRecord {
            path,
            quaternion: pose.wxyz(),
            translation: pose.translation_array(),
            mask: mask_kind,
            sharpness: sharpness_of(&img, Some(&mask))?,
            timestamp_index: Some(i as u64),
            depth: Some(depth),
        });
    }
    let manifest = DatasetManifest {
        camera: CameraDims {
            width: cam.width(),
            height: cam.height(),
        },
        bounds: scene.bounds,
        frames,
    };
    let path = args.out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    std::fs::write(args.out.join("scene.toml"), scene.to_toml())?;
    rec.output(&path);
    Ok(path)
}

#[derive(Debug, Clone, clap::Args)]
pub struct IngestArgs {
    /// Directory of numbered frames (`0001.png`, or `0001_front.png` and
    /// `0001_back.png` with `--rig`) plus `poses.toml`.
    #[arg(long)]
    pub raw: PathBuf,
    /// Dual-fisheye rig calibration; frames are stitched when given.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long)]
    pub target_count: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "none")]
    pub mask: MaskArg,
    /// First frame number kept (inclusive).
    #[arg(long)]
    pub start: Option<u64>,
    /// Last frame number kept (inclusive).
    #[arg(long)]
    pub end: Option<u64>,
    /// Output panorama width when stitching.
    #[arg(long, default_value_t = 512)]
    pub width: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub frame: u64,
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

/// `poses.toml` in a raw capture directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub bounds: Aabb,
    #[serde(default)]
    pub poses: Vec<PoseRecord>,
}

fn numbered(dir: &Path, suffix: &str) -> Result<BTreeMap<u64, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(suffix) {
            if !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
                out.insert(
                    stem.parse()
                        .map_err(|_| Error::Domain(format!("frame number {stem} too large")))?,
                    path,
                );
            }
        }
    }
    Ok(out)
}

/// Turn a raw capture into a dataset. Returns the manifest path.
pub fn ingest(args: &IngestArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let poses_path = args.raw.join(POSES_FILE);
    if !poses_path.exists() {
        return Err(Error::Domain(format!(
            "{} not found: every raw capture needs a pose file with [bounds] and one \
             [[poses]] entry (frame, quaternion [w,x,y,z], translation [x,y,z]) per frame",
            poses_path.display()
        )));
    }
    let pose_file: PoseFile = parse_toml(&std::fs::read_to_string(&poses_path)?, &poses_path)?;
    pose_file.bounds.validate()?;
    let poses: BTreeMap<u64, &PoseRecord> = pose_file.poses.iter().map(|p| (p.frame, p)).collect();

    let rig: Option<RigCalibration> = match &args.rig {
        Some(p) => {
            let r: RigCalibration = parse_toml(&std::fs::read_to_string(p)?, p)?;
            r.validate()?;
            Some(r)
        }
        None => None,
    };
    let in_range = |n: &u64| args.start.is_none_or(|s| *n >= s) && args.end.is_none_or(|e| *n <= e);
    let numbers: Vec<(u64, PathBuf, Option<PathBuf>)> = if rig.is_some() {
        let fronts = numbered(&args.raw, "_front.png")?;
        let backs = numbered(&args.raw, "_back.png")?;
        fronts
            .into_iter()
            .filter(|(n, _)| in_range(n))
            .map(|(n, f)| {
                let b = backs
                    .get(&n)
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("frame {n} has a front image but no {n:04}_back.png")))?;
                Ok((n, f, Some(b)))
            })
            .collect::<Result<_>>()?
    } else {
        numbered(&args.raw, ".png")?
            .into_iter()
            .filter(|(n, _)| in_range(n))
            .map(|(n, p)| (n, p, None))
            .collect()
    };
    if numbers.is_empty() {
        return Err(Error::Domain(format!(
            "no numbered frames found in {}",
            args.raw.display()
        )));
    }
    for (n, _, _) in &numbers {
        if !poses.contains_key(n) {
            return Err(Error::Domain(format!(
                "frame {n} has no pose: {} must list [[poses]] frame = {n} with quaternion \
                 [w,x,y,z] and translation [x,y,z] (the dataset manifest pose contract)",
                poses_path.display()
            )));
        }
    }

    let mask_kind: MaskKind = args.mask.into();
    let images: Vec<image::RgbImage> = numbers
        .par_iter()
        .map(|(_, path, back)| match (&rig, back) {
            (Some(rig), Some(back)) => {
                let cam = EquirectCamera::new(args.width, args.width / 2)?;
                let f = to_f32(&imaging::load_rgb(path)?);
                let b = to_f32(&imaging::load_rgb(back)?);
                Ok(to_u8(&stitch_dual_fisheye(&f, &b, rig, &cam)?.0))
            }
            _ => imaging::load_rgb(path),
        })
        .collect::<Result<_>>()?;
    let (w, h) = images[0].dimensions();
    let cam = EquirectCamera::new(w, h)?;
    for ((n, _, _), img) in numbers.iter().zip(&images) {
        if img.dimensions() != (w, h) {
            return Err(Error::Domain(format!(
                "frame {n} is {:?}, expected {w}x{h}",
                img.dimensions()
            )));
        }
    }
    let mask = occlusion_mask(&cam, mask_kind);
    let sharpness: Vec<f64> = images
        .par_iter()
        .map(|img| sharpness_of(img, Some(&mask)))
        .collect::<Result<_>>()?;
    let selected = select_frames(&sharpness, args.target_count.unwrap_or(numbers.len()), args.window)?;

    let mut frames = Vec::with_capacity(selected.len());
    for &i in &selected {
        let n = numbers[i].0;
        let pose = poses[&n];
        Pose::from_wxyz(pose.quaternion, pose.translation).map_err(|e| Error::Domain(format!("frame {n}: {e}")))?;
        let path = format!("images/{}", frame_name(n));
        imaging::save_rgb(&images[i], &args.out.join(&path))?;
        frames.push(FrameRecord {
            path,
            quaternion: pose.quaternion,
            translation: pose.translation,
            mask: mask_kind,
            sharpness: sharpness[i],
            timestamp_index: Some(n),
            depth: None,
        });
    }
    let manifest = DatasetManifest {
        camera: CameraDims { width: w, height: h },
        bounds: pose_file.bounds,
        frames,
    };
    manifest.validate(1)?;
    let path = args.out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    rec.output(&path);
    Ok(path)
}

fn load_dataset(path: &Path, min_frames: usize) -> Result<Dataset> {
    let ds = Dataset::load(path)?;
    ds.manifest.validate(min_frames)?;
    Ok(ds)
}

/// Train a field on every frame of the dataset and write the checkpoint
/// plus a `loss.csv` beside it.
pub fn train(cfg: &PipelineConfig, dataset: &Path, out: &Path, rec: &mut Recorder) -> Result<TrainReport> {
    let ds = load_dataset(dataset, 1)?;
    let bounds = ds.manifest.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut field = RadianceField::<f32>::new(cfg.field, bounds, T_NEAR, bounds.diagonal(), &mut rng)?;
    let report = nerf::train(&mut field, &ds.frames, &cfg.train, |p| {
        if p.iteration % 100 == 0 || p.iteration + 1 == cfg.train.iterations {
            log::info!("iteration {} loss {:.6}", p.iteration, p.loss);
        }
    })?;
    checkpoint::save(&field, out)?;
    rec.output(out);
    let csv = out.with_extension("loss.csv");
    let mut text = String::from("iteration,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        text += &format!("{i},{l}\n");
    }
    std::fs::write(&csv, text)?;
    rec.output(&csv);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    pub frame: usize,
    pub path: PathBuf,
    pub psnr: f64,
}

/// Render the given dataset frames (all when `frames` is empty) and score
/// them against the captured images over unmasked pixels.
pub fn render_dataset(
    cfg: &PipelineConfig,
    checkpoint_path: &Path,
    dataset: &Path,
    frames: &[usize],
    out_dir: &Path,
    rec: &mut Recorder,
) -> Result<Vec<ViewMetric>> {
    let field = checkpoint::load(checkpoint_path)?;
    let ds = load_dataset(dataset, 1)?;
    let cam = ds.camera();
    let list: Vec<usize> = if frames.is_empty() {
        (0..ds.frames.len()).collect()
    } else {
        frames.to_vec()
    };
    std::fs::create_dir_all(out_dir)?;
    let mut metrics_out = Vec::with_capacity(list.len());
    for &i in &list {
        let frame = ds
            .frames
            .get(i)
            .ok_or_else(|| Error::Domain(format!("frame {i} out of range ({} frames)", ds.frames.len())))?;
        let view = nerf::render_panorama_view(&field, &frame.pose, &cam, cfg.render.samples as usize)?;
        let path = out_dir.join(format!("view_{i:04}.png"));
        imaging::save_rgb(&to_u8(&view.image), &path)?;
        rec.output(&path);
        let psnr = metrics::psnr(&view.image, &to_f32(&frame.image), &frame.mask)?;
        metrics_out.push(ViewMetric { frame: i, path, psnr });
    }
    let summary = out_dir.join("metrics.json");
    std::fs::write(
        &summary,
        serde_json::to_string_pretty(&metrics_out).expect("metrics serialize"),
    )?;
    rec.output(&summary);
    Ok(metrics_out)
}

/// Render one panorama from an explicit pose.
pub fn render_pose(
    cfg: &PipelineConfig,
    checkpoint_path: &Path,
    pose: &Pose,
    width: u32,
    out: &Path,
    rec: &mut Recorder,
) -> Result<()> {
    let field = checkpoint::load(checkpoint_path)?;
    let cam = EquirectCamera::new(width, width / 2)?;
    let view = nerf::render_panorama_view(&field, pose, &cam, cfg.render.samples as usize)?;
    imaging::save_rgb(&to_u8(&view.image), out)?;
    rec.output(out);
    Ok(())
}

pub fn export_cloud(
    cfg: &PipelineConfig,
    checkpoint_path: &Path,
    out: &Path,
    rec: &mut Recorder,
) -> Result<PointCloud> {
    let field = checkpoint::load(checkpoint_path)?;
    let e = &cfg.export;
    let cloud = nerf::export_pointcloud(&field, e.resolution, e.threshold, e.color)?;
    cloud.write_ply(out)?;
    rec.output(out);
    Ok(cloud)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub keyframes: Vec<usize>,
    pub views: BTreeMap<usize, Vec<usize>>,
    /// Valid pixels per keyframe before and after cleaning.
    pub valid_raw: Vec<usize>,
    pub valid_clean: Vec<usize>,
    /// Reference pixels processed per second of PatchMatch.
    pub pixels_per_second: f64,
}

pub const DEPTH_SUMMARY_FILE: &str = "depth.toml";

fn map_name(frame: usize) -> String {
    format!("frame_{frame:04}")
}

/// Keyframe selection, PatchMatch per keyframe and consistency cleaning.
/// Raw maps go to `out_dir/raw`, cleaned maps to `out_dir`.
pub fn depth(cfg: &PipelineConfig, dataset: &Path, out_dir: &Path, rec: &mut Recorder) -> Result<Vec<DepthMap>> {
    let ds = load_dataset(dataset, 2)?;
    let m = &cfg.matching;
    let keyframes = stereo::select_keyframes(
        &ds.frames,
        cfg.keyframes.min_baseline,
        cfg.keyframes.min_sharpness_quantile,
    )?;
    if keyframes.len() < 2 {
        return Err(Error::Domain(format!(
            "only {} keyframe(s) passed the baseline and sharpness filters; stereo needs at least 2",
            keyframes.len()
        )));
    }
    let views: BTreeMap<usize, Vec<usize>> = keyframes
        .iter()
        .map(|&k| {
            (
                k,
                stereo::select_views(&ds.frames, k, &keyframes, m.neighbors as usize, m.d_min, m.d_max),
            )
        })
        .collect();
    let start = std::time::Instant::now();
    let raw: Vec<DepthMap> = keyframes
        .iter()
        .map(|&k| {
            let t = std::time::Instant::now();
            let d = stereo::patchmatch_depth(&ds.frames, k, &views[&k], m)?;
            log::info!(
                "keyframe {k}: {} valid pixels against {:?} in {:.1}s",
                d.valid_count(),
                views[&k],
                t.elapsed().as_secs_f64()
            );
            Ok(d)
        })
        .collect::<Result<_>>()?;
    let pixels = raw.iter().map(|d| d.depth.len()).sum::<usize>() as f64;
    let pixels_per_second = pixels / start.elapsed().as_secs_f64().max(1e-9);
    let cleaned = stereo::clean_depth(&raw, &ds.frames, m)?;
    for (r, c) in raw.iter().zip(&cleaned) {
        if r.no_overlap {
            log::warn!("keyframe {} has no overlapping views", r.reference);
        }
        rec.output(stereo::save_depth_map(r, &out_dir.join("raw"), &map_name(r.reference))?);
        rec.output(stereo::save_depth_map(c, out_dir, &map_name(c.reference))?);
    }
    let summary = DepthSummary {
        keyframes,
        views,
        valid_raw: raw.iter().map(DepthMap::valid_count).collect(),
        valid_clean: cleaned.iter().map(DepthMap::valid_count).collect(),
        pixels_per_second,
    };
    let path = out_dir.join(DEPTH_SUMMARY_FILE);
    // BTreeMap keys must be strings in TOML
    let doc = toml::to_string(&SummaryDoc::from(&summary)).expect("summary serializes");
    std::fs::write(&path, doc)?;
    rec.output(&path);
    Ok(cleaned)
}

#[derive(Serialize)]
struct SummaryDoc {
    keyframes: Vec<usize>,
    valid_raw: Vec<usize>,
    valid_clean: Vec<usize>,
    pixels_per_second: f64,
    views: BTreeMap<String, Vec<usize>>,
}

impl From<&DepthSummary> for SummaryDoc {
    fn from(s: &DepthSummary) -> Self {
        Self {
            keyframes: s.keyframes.clone(),
            valid_raw: s.valid_raw.clone(),
            valid_clean: s.valid_clean.clone(),
            pixels_per_second: s.pixels_per_second,
            views: s.views.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }
}

/// Load every map sidecar directly inside `dir`, in name order.
pub fn load_depth_dir(dir: &Path) -> Result<Vec<DepthMap>> {
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    sidecars.retain(|p| {
        p.extension().is_some_and(|e| e == "toml") && p.file_name().is_some_and(|n| n != DEPTH_SUMMARY_FILE)
    });
    sidecars.sort();
    sidecars.iter().map(|p| stereo::load_depth_map(p)).collect()
}

/// Fuse the cleaned maps in `depth_dir` into one cloud.
pub fn fuse(
    cfg: &PipelineConfig,
    dataset: &Path,
    depth_dir: &Path,
    out: &Path,
    rec: &mut Recorder,
) -> Result<PointCloud> {
    let ds = load_dataset(dataset, 1)?;
    let maps = load_depth_dir(depth_dir)?;
    let fused = stereo::fuse(&maps, &ds.frames, cfg.fuse.voxel)?;
    fused.cloud.write_ply(out)?;
    rec.output(out);
    Ok(fused.cloud)
}

/// Artifact locations used by `run`.
pub struct RunLayout {
    pub checkpoint: PathBuf,
    pub renders: PathBuf,
    pub nerf_cloud: PathBuf,
    pub depth: PathBuf,
    pub stereo_cloud: PathBuf,
}

impl RunLayout {
    pub fn new(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("field.pnrf"),
            renders: dir.join("renders"),
            nerf_cloud: dir.join("nerf_cloud.ply"),
            depth: dir.join("depth"),
            stereo_cloud: dir.join("stereo_cloud.ply"),
        }
    }
}

/// Execute the configured stages in pipeline order.
pub fn run(cfg: &PipelineConfig, out_dir: &Path, rec: &mut Recorder) -> Result<()> {
    let dataset = cfg.require_dataset()?.to_path_buf();
    let layout = RunLayout::new(out_dir);
    std::fs::create_dir_all(out_dir)?;
    let mut stages = cfg.stages.clone();
    stages.sort();
    stages.dedup();
    for stage in stages {
        rec.stage(stage.name(), |rec| match stage {
            crate::config::Stage::Train => train(cfg, &dataset, &layout.checkpoint, rec).map(drop),
            crate::config::Stage::Render => {
                render_dataset(cfg, &layout.checkpoint, &dataset, &[], &layout.renders, rec).map(drop)
            }
            crate::config::Stage::ExportCloud => {
                export_cloud(cfg, &layout.checkpoint, &layout.nerf_cloud, rec).map(drop)
            }
            crate::config::Stage::Depth => depth(cfg, &dataset, &layout.depth, rec).map(drop),
            crate::config::Stage::Fuse => fuse(cfg, &dataset, &layout.depth, &layout.stereo_cloud, rec).map(drop),
        })?;
    }
    Ok(())
}

/// Parse `w,x,y,z,tx,ty,tz`.
pub fn parse_pose(text: &str) -> Result<Pose> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Domain(format!("pose {text:?}: {e}")))?;
    if v.len() != 7 {
        return Err(Error::Domain(format!(
            "pose needs 7 numbers (w,x,y,z,tx,ty,tz), got {}",
            v.len()
        )));
    }
    Pose::from_wxyz([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])
}
