//! Voxel fusion of cleaned depth maps into one colored cloud.

use std::collections::BTreeMap;

use super::DepthMap;
use crate::error::{ensure, Result};
use crate::ingest::PanoramaFrame;
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedCloud {
    pub cloud: PointCloud,
    pub voxel: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    cost: f32,
    position: [f32; 3],
    color: [u8; 3],
    normal: [f32; 3],
}

/// Back-project every valid pixel and keep the cheapest point per voxel.
///
/// Ties go to the earlier map, then the earlier pixel. Points come out in
/// voxel key order.
pub fn fuse(maps: &[DepthMap], frames: &[PanoramaFrame], voxel: f64) -> Result<FusedCloud> {
    ensure!(
        voxel > 0.0 && voxel.is_finite(),
        "voxel size must be positive, got {voxel}"
    );
    let mut grid: BTreeMap<[i64; 3], Candidate> = BTreeMap::new();
    for m in maps {
        ensure!(
            m.reference < frames.len(),
            "depth map references frame {} but only {} frames exist",
            m.reference,
            frames.len()
        );
        let frame = &frames[m.reference];
        ensure!(
            frame.image.dimensions() == (m.width, m.height),
            "depth map of frame {} does not match the image size",
            m.reference
        );
        for i in 0..m.depth.len() {
            if !m.is_valid(i) {
                continue;
            }
            let p = m.point(frame, i);
            let position = [p.x as f32, p.y as f32, p.z as f32];
            // key the stored f32 position so output voxels are exact
            let key = position.map(|c| (c as f64 / voxel).floor() as i64);
            let cand = Candidate {
                cost: m.cost[i],
                position,
                color: frame.image.get_pixel(i as u32 % m.width, i as u32 / m.width).0,
                normal: m.normal[i],
            };
            grid.entry(key)
                .and_modify(|c| {
                    if cand.cost < c.cost {
                        *c = cand;
                    }
                })
                .or_insert(cand);
        }
    }
    let mut cloud = PointCloud {
        normals: Some(Vec::with_capacity(grid.len())),
        ..Default::default()
    };
    for c in grid.into_values() {
        cloud.push(c.position, c.color);
        cloud.normals.as_mut().unwrap().push(c.normal);
    }
    Ok(FusedCloud { cloud, voxel })
}
