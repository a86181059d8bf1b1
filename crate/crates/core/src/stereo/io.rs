//! Depth maps on disk.
//!
//! A map named `name` is stored as four files in one directory:
//!
//! - `name.depth.png`: 16-bit gray, depth in millimeters, 0 = invalid
//! - `name.cost.png`: 16-bit gray, cost scaled to `[0, 65535]`
//! - `name.normal.png`: 16-bit RGB, normal components mapped from `[-1, 1]`
//! - `name.toml`: frame index, depth range and dimensions

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::DepthMap;
use crate::dataset::parse_toml;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSidecar {
    pub frame: usize,
    pub width: u32,
    pub height: u32,
    pub d_min: f64,
    pub d_max: f64,
    /// Meters per depth PNG unit.
    pub depth_scale: f64,
    pub depth: String,
    pub cost: String,
    pub normal: String,
    #[serde(default)]
    pub no_overlap: bool,
}

const DEPTH_SCALE: f64 = 0.001;

fn unit16(x: f64) -> u16 {
    (x.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Write `map` under `dir` and return the sidecar path.
pub fn save_depth_map(map: &DepthMap, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (w, h) = (map.width, map.height);
    let file = |suffix: &str| format!("{name}.{suffix}");
    let depth = ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| {
        let d = map.depth[(y * w + x) as usize] as f64;
        if d > 0.0 {
            Luma([(d / DEPTH_SCALE).round().clamp(1.0, 65535.0) as u16])
        } else {
            Luma([0])
        }
    });
    let cost = ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| Luma([unit16(map.cost[(y * w + x) as usize] as f64)]));
    let normal = ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
        Rgb(map.normal[(y * w + x) as usize].map(|c| unit16((c as f64 + 1.0) / 2.0)))
    });
    depth.save(dir.join(file("depth.png")))?;
    cost.save(dir.join(file("cost.png")))?;
    normal.save(dir.join(file("normal.png")))?;
    let sidecar = DepthSidecar {
        frame: map.reference,
        width: w,
        height: h,
        d_min: map.d_min,
        d_max: map.d_max,
        depth_scale: DEPTH_SCALE,
        depth: file("depth.png"),
        cost: file("cost.png"),
        normal: file("normal.png"),
        no_overlap: map.no_overlap,
    };
    let path = dir.join(file("toml"));
    std::fs::write(&path, toml::to_string(&sidecar).expect("sidecar serializes"))?;
    Ok(path)
}

fn open16<P: image::Pixel<Subpixel = u16> + 'static>(
    dir: &Path,
    name: &str,
    w: u32,
    h: u32,
    convert: impl Fn(image::DynamicImage) -> ImageBuffer<P, Vec<u16>>,
) -> Result<ImageBuffer<P, Vec<u16>>> {
    let path = dir.join(name);
    let img = image::open(&path)?;
    if !matches!(
        img,
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageRgb16(_)
    ) {
        return Err(Error::Format(format!("{}: expected a 16-bit PNG", path.display())));
    }
    let img = convert(img);
    if img.dimensions() != (w, h) {
        return Err(Error::Format(format!(
            "{}: is {:?}, sidecar says {w}x{h}",
            path.display(),
            img.dimensions()
        )));
    }
    Ok(img)
}

/// Read a map written by [`save_depth_map`] from its sidecar path.
pub fn load_depth_map(sidecar: &Path) -> Result<DepthMap> {
    let meta: DepthSidecar = parse_toml(&std::fs::read_to_string(sidecar)?, sidecar)?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let (w, h) = (meta.width, meta.height);
    let depth = open16(dir, &meta.depth, w, h, |i| i.into_luma16())?;
    let cost = open16(dir, &meta.cost, w, h, |i| i.into_luma16())?;
    let normal = open16(dir, &meta.normal, w, h, |i| i.into_rgb16())?;
    let mut map = DepthMap::invalid(w, h, meta.frame, meta.d_min, meta.d_max);
    map.no_overlap = meta.no_overlap;
    for i in 0..map.depth.len() {
        let d = depth.as_raw()[i];
        if d == 0 {
            continue;
        }
        map.depth[i] = (d as f64 * meta.depth_scale) as f32;
        map.cost[i] = (cost.as_raw()[i] as f64 / 65535.0) as f32;
        map.normal[i] = [0, 1, 2].map(|c| (normal.as_raw()[i * 3 + c] as f64 / 65535.0 * 2.0 - 1.0) as f32);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_to_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DepthMap::invalid(8, 4, 3, 0.3, 10.0);
        m.depth[5] = 2.5004;
        m.cost[5] = 0.125;
        m.normal[5] = [0.0, -0.6, -0.8];
        m.depth[6] = 70.0;
        m.cost[6] = 0.3;
        let path = save_depth_map(&m, dir.path(), "frame_0003").unwrap();
        let back = load_depth_map(&path).unwrap();
        assert_eq!(back.reference, 3);
        assert_eq!(back.valid_count(), 2);
        assert!((back.depth[5] - 2.5).abs() < 1e-6);
        assert!((back.depth[6] - 65.535).abs() < 1e-4);
        assert!((back.cost[5] - 0.125).abs() < 1e-4);
        for c in 0..3 {
            assert!((back.normal[5][c] - m.normal[5][c]).abs() < 1e-4);
        }
        assert_eq!(back.cost[0], 1.0);
        assert!(dir.path().join("frame_0003.depth.png").exists());
    }

    #[test]
    fn saving_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DepthMap::invalid(8, 4, 0, 0.3, 10.0);
        m.depth[1] = 1.234;
        save_depth_map(&m, dir.path(), "a").unwrap();
        save_depth_map(&m, dir.path(), "b").unwrap();
        for ext in ["depth.png", "cost.png", "normal.png"] {
            let a = std::fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
            let b = std::fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = DepthMap::invalid(8, 4, 0, 0.3, 10.0);
        let path = save_depth_map(&m, dir.path(), "x").unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("width = 8", "width = 16");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_depth_map(&path), Err(Error::Format(_))));
    }
}
