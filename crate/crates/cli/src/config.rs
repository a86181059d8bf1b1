//! Pipeline configuration document.
//!
//! ```toml
//! dataset = "data/manifest.toml"   # required by every stage except synth
//! output_dir = "out"
//! seed = 0                         # copied into [train] and [match]
//! stages = ["train", "export_cloud", "depth", "fuse"]
//!
//! [field]                          # hash grid and MLP width
//! hidden_width = 64
//! [field.grid]
//! levels = 16
//!
//! [train]                          # iterations, rays_per_batch, ...
//! [render]                         # samples
//! [export]                         # resolution, threshold, color
//! [keyframes]                      # min_baseline, min_sharpness_quantile
//! [match]                          # PatchMatch settings
//! [fuse]                           # voxel
//! ```
//!
//! Every table is optional. Unknown keys are rejected before any work
//! starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use panorad_core::nerf::{ColorMode, FieldConfig, TrainConfig};
use panorad_core::stereo::MatchConfig;
use panorad_core::{Error, Result};

pub const OUTPUT_DIR_ENV: &str = "PANORAD_OUTPUT_DIR";
pub const THREADS_ENV: &str = "PANORAD_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Train,
    Render,
    ExportCloud,
    Depth,
    Fuse,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Render => "render",
            Stage::ExportCloud => "export_cloud",
            Stage::Depth => "depth",
            Stage::Fuse => "fuse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub samples: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { samples: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Grid cells per axis.
    pub resolution: u32,
    /// Minimum density for a cell to be exported.
    pub threshold: f64,
    pub color: ColorMode,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            threshold: 10.0,
            color: ColorMode::Radiance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeConfig {
    pub min_baseline: f64,
    pub min_sharpness_quantile: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            min_baseline: 0.2,
            min_sharpness_quantile: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseConfig {
    /// Voxel edge in meters.
    pub voxel: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self { voxel: 0.02 }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Train, Stage::ExportCloud, Stage::Depth, Stage::Fuse]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub keyframes: KeyframeConfig,
    #[serde(default, rename = "match")]
    pub matching: MatchConfig,
    #[serde(default)]
    pub fuse: FuseConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl PipelineConfig {
    /// Parse and validate. Relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Config(format!("line {line}: {}", e.message()))
        })?;
        if let Some(d) = &cfg.dataset {
            cfg.dataset = Some(base.join(d));
        }
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.matching.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.field.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.matching.validate().map_err(wrap)?;
        if !(self.render.samples >= 1) {
            return Err(Error::Config("render.samples must be positive".into()));
        }
        if self.export.resolution < 2 || !self.export.threshold.is_finite() {
            return Err(Error::Config(
                "export needs resolution >= 2 and a finite threshold".into(),
            ));
        }
        if !(self.fuse.voxel > 0.0) {
            return Err(Error::Config("fuse.voxel must be positive".into()));
        }
        if self.keyframes.min_baseline < 0.0 || !(0.0..=1.0).contains(&self.keyframes.min_sharpness_quantile) {
            return Err(Error::Config(
                "keyframes need min_baseline >= 0 and min_sharpness_quantile in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// The dataset path, which must exist.
    pub fn require_dataset(&self) -> Result<&Path> {
        let d = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset manifest configured".into()))?;
        if !d.exists() {
            return Err(Error::Config(format!(
                "dataset manifest {} does not exist",
                d.display()
            )));
        }
        Ok(d)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Output directory precedence: flag, then environment, then config.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &PipelineConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

/// Thread count precedence: flag, then environment.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}
