//! Panoramic multi-view stereo: view selection, PatchMatch depth estimation,
//! consistency cleaning and voxel fusion.

mod clean;
mod fuse;
mod io;
mod patchmatch;
mod select;

pub use clean::clean_depth;
pub use fuse::{fuse, FusedCloud};
pub use io::{load_depth_map, save_depth_map, DepthSidecar};
pub use patchmatch::{patchmatch_depth, MatchConfig};
pub use select::{baseline_preference, select_keyframes, select_views, sharpness_quantile, view_score};

use crate::geometry::{EquirectCamera, Vec3};
use crate::ingest::PanoramaFrame;

/// Per-pixel depth estimate of one reference panorama.
///
/// Depth is the distance along the pixel ray (not the z coordinate); `0`
/// marks an invalid pixel. Normals are in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Index of the reference frame in the dataset.
    pub reference: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub depth: Vec<f32>,
    pub normal: Vec<[f32; 3]>,
    /// Matching cost in `[0, 1]`; `1` for invalid pixels.
    pub cost: Vec<f32>,
    /// No neighbor view produced a single usable match.
    pub no_overlap: bool,
}

impl DepthMap {
    pub fn invalid(width: u32, height: u32, reference: usize, d_min: f64, d_max: f64) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            reference,
            d_min,
            d_max,
            depth: vec![0.0; n],
            normal: vec![[0.0; 3]; n],
            cost: vec![1.0; n],
            no_overlap: false,
        }
    }

    pub fn camera(&self) -> EquirectCamera {
        EquirectCamera::new(self.width, self.height).expect("depth maps share panorama dimensions")
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.depth[i] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    pub fn invalidate(&mut self, i: usize) {
        self.depth[i] = 0.0;
        self.normal[i] = [0.0; 3];
        self.cost[i] = 1.0;
    }

    /// World point of pixel `i` seen from `frame`.
    pub fn point(&self, frame: &PanoramaFrame, i: usize) -> Vec3 {
        let cam = self.camera();
        let (u, v) = ((i % self.width as usize) as f64, (i / self.width as usize) as f64);
        let r = frame.pose.rotation * cam.pixel_to_direction_unchecked(u, v).into_inner();
        frame.pose.translation + r * self.depth[i] as f64
    }
}
