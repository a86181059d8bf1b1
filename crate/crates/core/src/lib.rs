//! Reconstruction toolkit for posed 360° panoramas: a hash-grid radiance
//! field, panoramic PatchMatch stereo and a synthetic ground-truth renderer.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod ingest;
pub mod metrics;
pub mod nerf;
pub mod oracle;
pub mod pointcloud;
pub mod stereo;

pub use error::{Error, Result};
