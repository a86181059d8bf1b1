//! Dataset manifests: the on-disk contract between capture, synthesis and
//! the reconstruction stages.
//!
//! A manifest is a TOML document:
//!
//! ```toml
//! [camera]
//! width = 256            # pixels, must be 2 × height
//! height = 128
//!
//! [bounds]               # scene box in meters, world frame
//! min = [-2.1, -1.6, -2.6]
//! max = [2.1, 1.6, 2.6]
//!
//! [[frames]]
//! path = "images/0000.png"          # relative to the manifest
//! quaternion = [1.0, 0.0, 0.0, 0.0] # w, x, y, z; camera → world rotation
//! translation = [0.0, 0.0, 0.0]     # camera center in world, meters
//! mask = "none"                     # or "bottom_third"
//! sharpness = 812.5                 # Laplacian variance
//! timestamp_index = 0               # optional, defaults to the entry index
//! depth = "depth/0000.png"          # optional ground-truth depth (PNG16, mm)
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{Aabb, EquirectCamera, Pose};
use crate::imaging;
use crate::ingest::{occlusion_mask, MaskKind, PanoramaFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDims {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub path: String,
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub mask: MaskKind,
    pub sharpness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

impl FrameRecord {
    pub fn pose(&self) -> Result<Pose> {
        Pose::from_wxyz(self.quaternion, self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub camera: CameraDims,
    pub bounds: Aabb,
    #[serde(default)]
    pub frames: Vec<FrameRecord>,
}

/// Parse a TOML document, reporting failures with a 1-based line number.
pub fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.message().to_string(),
        }
    })
}

impl DatasetManifest {
    pub fn camera(&self) -> Result<EquirectCamera> {
        EquirectCamera::new(self.camera.width, self.camera.height)
    }

    /// Structural checks; `min_frames` is 1 for radiance fields, 2 for stereo.
    pub fn validate(&self, min_frames: usize) -> Result<()> {
        self.camera()?;
        self.bounds.validate()?;
        ensure!(
            self.frames.len() >= min_frames,
            "manifest lists {} frame(s); at least {min_frames} posed frame(s) are required \
             (each [[frames]] entry needs path, quaternion [w,x,y,z], translation [x,y,z], mask, sharpness)",
            self.frames.len()
        );
        for (i, f) in self.frames.iter().enumerate() {
            f.pose()
                .map_err(|e| Error::domain(format!("frame {i} ({}): {e}", f.path)))?;
            ensure!(
                f.sharpness.is_finite() && f.sharpness >= 0.0,
                "frame {i} ({}): sharpness must be finite and non-negative",
                f.path
            );
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let m: Self = parse_toml(text, path)?;
        m.validate(0)?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// A manifest with its frames loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub frames: Vec<PanoramaFrame>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cam = manifest.camera()?;
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for (i, rec) in manifest.frames.iter().enumerate() {
            let image = imaging::load_rgb(&root.join(&rec.path))?;
            ensure!(
                image.dimensions() == (cam.width(), cam.height()),
                "frame {i} ({}) is {:?}, manifest camera is {}x{}",
                rec.path,
                image.dimensions(),
                cam.width(),
                cam.height()
            );
            frames.push(PanoramaFrame::new(
                image,
                rec.pose()?,
                occlusion_mask(&cam, rec.mask),
                rec.sharpness,
                rec.timestamp_index.unwrap_or(i as u64),
            )?);
        }
        Ok(Self { manifest, root, frames })
    }

    pub fn camera(&self) -> EquirectCamera {
        self.manifest.camera().expect("validated on load")
    }

    pub fn depth_path(&self, index: usize) -> Option<PathBuf> {
        self.manifest.frames[index].depth.as_ref().map(|p| self.root.join(p))
    }
}
