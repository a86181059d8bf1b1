//! Density thresholding on a regular grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{Activations, RadianceField};
use super::scalar::Scalar;
use crate::error::{ensure, Result};
use crate::geometry::Vec3;
use crate::imaging::quantize;
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Query the field looking down the `(1, -1, 1)` diagonal.
    #[default]
    Radiance,
    /// Encode density as gray, saturating at 4× the threshold.
    Density,
}

/// One point per grid cell whose center has density at least `threshold`.
/// Points are ordered by cell index (x fastest, then y, then z).
pub fn export_pointcloud<S: Scalar>(
    field: &RadianceField<S>,
    resolution: u32,
    threshold: f64,
    mode: ColorMode,
) -> Result<PointCloud> {
    ensure!(
        resolution >= 2,
        "export grid resolution must be at least 2, got {resolution}"
    );
    ensure!(threshold.is_finite(), "density threshold must be finite");
    let n = resolution as usize;
    let b = field.bounds;
    let cell = b.size() / n as f64;
    let view = Vec3::new(1.0, -1.0, 1.0).normalize();
    let dir = [S::lit(view.x), S::lit(view.y), S::lit(view.z)];

    let slices: Vec<PointCloud> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut centers = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    centers
                        .push(b.min + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5).component_mul(&cell));
                }
            }
            let pos: Vec<[S; 3]> = centers.iter().map(|c| field.normalize(c)).collect();
            let mut act = Activations::default();
            act.forward(field, &pos, &vec![dir; pos.len()]);
            let mut out = PointCloud::default();
            for (idx, c) in centers.iter().enumerate() {
                let sigma = act.sigma[idx].to_f64().unwrap();
                if sigma < threshold {
                    continue;
                }
                let color = match mode {
                    ColorMode::Radiance => [0, 1, 2].map(|ch| quantize(act.rgb[idx * 3 + ch].to_f32().unwrap())),
                    ColorMode::Density => {
                        let g = (sigma / (4.0 * threshold.max(f64::MIN_POSITIVE))).min(1.0);
                        [quantize(g as f32); 3]
                    }
                };
                out.push([c.x as f32, c.y as f32, c.z as f32], color);
            }
            out
        })
        .collect();

    let mut cloud = PointCloud::default();
    for s in slices {
        cloud.positions.extend(s.positions);
        cloud.colors.extend(s.colors);
    }
    if cloud.is_empty() {
        log::warn!("no grid cell reached density {threshold}; exported cloud is empty");
    }
    Ok(cloud)
}
