//! Multi-view consistency check and speckle removal.

use rayon::prelude::*;

use super::{DepthMap, MatchConfig};
use crate::error::{ensure, Result};
use crate::geometry::{angles_from_direction, Vec3};
use crate::ingest::PanoramaFrame;

/// Does `map` (seen from `frame`) agree with world point `x` to within a
/// relative tolerance? The nearest pixel's plane is intersected with the
/// exact ray toward `x`, so slanted surfaces compare fairly.
fn agrees(map: &DepthMap, frame: &PanoramaFrame, x: &Vec3, tol: f64) -> bool {
    let local = frame.pose.rotation.inverse() * (x - frame.pose.translation);
    let dist = local.norm();
    if dist < 1e-9 {
        return false;
    }
    let r = local / dist;
    let cam = map.camera();
    let (theta, phi) = angles_from_direction(&nalgebra::Unit::new_unchecked(r));
    let (px, py) = cam.angles_to_pixel(theta, phi);
    let (w, h) = (map.width as i64, map.height as i64);
    let (u, v) = ((px.round() as i64).rem_euclid(w), (py.round() as i64).clamp(0, h - 1));
    let i = (v * w + u) as usize;
    let d = map.depth[i] as f64;
    if d <= 0.0 {
        return false;
    }
    let [nx, ny, nz] = map.normal[i];
    let n = frame.pose.rotation.inverse() * Vec3::new(nx as f64, ny as f64, nz as f64);
    let r_pix = cam.pixel_to_direction_unchecked(u as f64, v as f64).into_inner();
    let (num, den) = (n.dot(&r_pix), n.dot(&r));
    if den >= -1e-9 {
        return false;
    }
    let d_ray = d * num / den;
    (d_ray - dist).abs() <= tol * dist
}

/// Remove 4-connected valid components (columns wrap) smaller than `min_size`.
pub(crate) fn remove_speckles(map: &mut DepthMap, min_size: usize) {
    let (w, h) = (map.width as usize, map.height as usize);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if seen[start] || !map.is_valid(start) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        component.clear();
        while let Some(i) = stack.pop() {
            component.push(i);
            let (u, v) = (i % w, i / w);
            let mut next = [Some(v * w + (u + 1) % w), Some(v * w + (u + w - 1) % w), None, None];
            if v > 0 {
                next[2] = Some(i - w);
            }
            if v + 1 < h {
                next[3] = Some(i + w);
            }
            for j in next.into_iter().flatten() {
                if !seen[j] && map.is_valid(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if component.len() < min_size {
            for &i in &component {
                map.invalidate(i);
            }
        }
    }
}

/// Keep pixels whose 3D point is confirmed by at least
/// `cfg.min_consistent_views` other maps, then drop small speckles.
///
/// `frames[m.reference]` must be the frame each map was computed from.
pub fn clean_depth(maps: &[DepthMap], frames: &[PanoramaFrame], cfg: &MatchConfig) -> Result<Vec<DepthMap>> {
    ensure!(
        maps.len() >= 2,
        "depth cleaning needs at least two maps, got {}",
        maps.len()
    );
    for m in maps {
        ensure!(
            m.reference < frames.len(),
            "depth map references frame {} but only {} frames exist",
            m.reference,
            frames.len()
        );
    }
    let need = cfg.min_consistent_views as usize;
    Ok(maps
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let frame = &frames[m.reference];
            let mut out = m.clone();
            for i in 0..m.depth.len() {
                if !m.is_valid(i) {
                    continue;
                }
                let x = m.point(frame, i);
                let votes = maps
                    .iter()
                    .enumerate()
                    .filter(|(j, other)| *j != k && agrees(other, &frames[other.reference], &x, cfg.consistency))
                    .take(need)
                    .count();
                if votes < need {
                    out.invalidate(i);
                }
            }
            remove_speckles(&mut out, cfg.speckle_size as usize);
            out
        })
        .collect())
}
