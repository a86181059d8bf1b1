//! Raw capture to posed, scored, masked panoramas.

use std::f64::consts::PI;

use image::{Rgb, Rgb32FImage, RgbImage};
use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::{EquirectCamera, FisheyeCamera, Pose};
use crate::imaging::{self, GrayF32, Mask, Wrap};

/// One posed equirectangular frame ready for reconstruction.
#[derive(Debug, Clone)]
pub struct PanoramaFrame {
    pub image: RgbImage,
    pub pose: Pose,
    pub mask: Mask,
    pub sharpness: f64,
    pub timestamp_index: u64,
}

impl PanoramaFrame {
    pub fn new(image: RgbImage, pose: Pose, mask: Mask, sharpness: f64, timestamp_index: u64) -> Result<Self> {
        let (w, h) = image.dimensions();
        EquirectCamera::new(w, h)?;
        ensure!(
            mask.dimensions() == (w, h),
            "mask is {:?} but image is {w}x{h}",
            mask.dimensions()
        );
        ensure!(
            sharpness >= 0.0 && sharpness.is_finite(),
            "sharpness must be a finite non-negative number"
        );
        Ok(Self {
            image,
            pose,
            mask,
            sharpness,
            timestamp_index,
        })
    }

    pub fn camera(&self) -> EquirectCamera {
        EquirectCamera::new(self.image.width(), self.image.height()).expect("validated on construction")
    }
}

/// Which part of the panorama the carrier vehicle occludes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    #[default]
    None,
    /// Camera mounted on top of the vehicle: the lowest third of the
    /// panorama shows the airframe.
    BottomThird,
}

/// Validity mask for a mounting configuration.
///
/// `BottomThird` clears the last `⌈height / 3⌉` rows.
pub fn occlusion_mask(cam: &EquirectCamera, kind: MaskKind) -> Mask {
    let mut mask = Mask::filled(cam.width(), cam.height(), true);
    if kind == MaskKind::BottomThird {
        let h = cam.height();
        mask.clear_rows_from(h - h.div_ceil(3));
    }
    mask
}

/// Back-to-back fisheye rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigCalibration {
    pub front: FisheyeCamera,
    pub back: FisheyeCamera,
    /// Rotation taking back-lens directions into the front-lens frame.
    #[serde(with = "wxyz")]
    pub back_rotation: UnitQuaternion<f64>,
    /// Angular width of the cross-fade band across the seam, radians.
    pub blend_width: f64,
}

mod wxyz {
    use nalgebra::{Quaternion, UnitQuaternion};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &UnitQuaternion<f64>, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UnitQuaternion<f64>, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Ok(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }
}

impl RigCalibration {
    /// Two lenses facing opposite directions (back lens turned 180° about +y).
    pub fn back_to_back(front: FisheyeCamera, back: FisheyeCamera, blend_width: f64) -> Result<Self> {
        let rig = Self {
            front,
            back,
            back_rotation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI),
            blend_width,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.blend_width > 0.0,
            "blend width must be positive, got {}",
            self.blend_width
        );
        // the two image caps must meet: the angle between the optical axes
        // may not exceed the sum of the half fields of view
        let axis_angle = (self.back_rotation * Vector3::z_axis()).dot(&Vector3::z_axis());
        let separation = axis_angle.clamp(-1.0, 1.0).acos();
        let reach = self.front.fov() / 2.0 + self.back.fov() / 2.0;
        ensure!(
            reach >= 2.0 * PI - separation - 1e-12 && reach >= separation,
            "lens fields of view do not cover the full sphere"
        );
        Ok(())
    }
}

/// Resample a dual-fisheye pair into one equirectangular panorama.
///
/// Directions seen by both lenses are cross-faded linearly in angle across
/// a band of `blend_width` centered where the two polar angles are equal.
/// The returned mask is `false` only where neither lens sees.
pub fn stitch_dual_fisheye(
    front: &Rgb32FImage,
    back: &Rgb32FImage,
    rig: &RigCalibration,
    out: &EquirectCamera,
) -> Result<(Rgb32FImage, Mask)> {
    rig.validate()?;
    ensure!(
        front.dimensions() == (rig.front.width(), rig.front.height()),
        "front image is {:?}, calibration expects {}x{}",
        front.dimensions(),
        rig.front.width(),
        rig.front.height()
    );
    ensure!(
        back.dimensions() == (rig.back.width(), rig.back.height()),
        "back image is {:?}, calibration expects {}x{}",
        back.dimensions(),
        rig.back.width(),
        rig.back.height()
    );
    let inv_back = rig.back_rotation.inverse();
    let w = out.width() as usize;
    let pixels: Vec<Option<[f32; 3]>> = (0..out.pixel_count())
        .into_par_iter()
        .map(|i| {
            let d = out.pixel_to_direction_unchecked((i % w) as f64, (i / w) as f64);
            let db = inv_back * d;
            let psi_f = FisheyeCamera::polar_angle(&d);
            let psi_b = FisheyeCamera::polar_angle(&db);
            let front_ok = psi_f <= rig.front.fov() / 2.0 + 1e-12;
            let back_ok = psi_b <= rig.back.fov() / 2.0 + 1e-12;
            let wf = match (front_ok, back_ok) {
                (false, false) => return None,
                (true, false) => 1.0,
                (false, true) => 0.0,
                (true, true) => (0.5 + (psi_b - psi_f) / (2.0 * rig.blend_width)).clamp(0.0, 1.0),
            };
            let sample = |cam: &FisheyeCamera, img: &Rgb32FImage, dir| {
                let (x, y) = project_clamped(cam, dir);
                imaging::sample_rgb(img, x, y, Wrap::Clamp)
            };
            let mut c = [0.0f32; 3];
            if wf > 0.0 {
                let s = sample(&rig.front, front, &d);
                c.iter_mut().zip(s).for_each(|(c, s)| *c += wf as f32 * s);
            }
            if wf < 1.0 {
                let s = sample(&rig.back, back, &db);
                c.iter_mut().zip(s).for_each(|(c, s)| *c += (1.0 - wf) as f32 * s);
            }
            Some(c)
        })
        .collect();
    let mut img = Rgb32FImage::new(out.width(), out.height());
    let mut mask = Mask::filled(out.width(), out.height(), true);
    for (i, p) in pixels.into_iter().enumerate() {
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        match p {
            Some(c) => img.put_pixel(x, y, Rgb(c)),
            None => mask.set(x, y, false),
        }
    }
    Ok((img, mask))
}

fn project_clamped(cam: &FisheyeCamera, d: &crate::geometry::UnitVec3) -> (f64, f64) {
    // directions at the very rim can round past fov/2
    cam.project(d).unwrap_or_else(|| {
        let psi = FisheyeCamera::polar_angle(d).min(cam.fov() / 2.0);
        let r = psi * cam.focal();
        let planar = d.x.hypot(d.y).max(f64::MIN_POSITIVE);
        let c = cam.center();
        (c[0] + r * d.x / planar, c[1] - r * d.y / planar)
    })
}

/// Variance of the 3×3 Laplacian of the luma image (0–255 scale) over the
/// valid pixels. Neighborhoods wrap around both image edges, so periodic
/// content scores the same under cyclic shifts.
pub fn sharpness_score(gray: &GrayF32, mask: Option<&Mask>) -> Result<f64> {
    let (w, h) = gray.dimensions();
    ensure!(w >= 3 && h >= 3, "sharpness needs at least a 3x3 image, got {w}x{h}");
    if let Some(m) = mask {
        ensure!(m.dimensions() == (w, h), "mask does not match image size");
    }
    let px = |x: i64, y: i64| {
        let xx = x.rem_euclid(w as i64) as u32;
        let yy = y.rem_euclid(h as i64) as u32;
        gray.get_pixel(xx, yy).0[0] as f64 * 255.0
    };
    let mut responses = Vec::with_capacity((w * h) as usize);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if mask.is_some_and(|m| !m.get(x as u32, y as u32)) {
                continue;
            }
            let lap = px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y);
            responses.push(lap);
        }
    }
    ensure!(!responses.is_empty(), "sharpness mask selects no pixels");
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
}

pub fn sharpness_of(img: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    sharpness_score(&imaging::luma_u8(img), mask)
}

/// Choose `target_count` frames at equal time intervals.
///
/// The sequence is split into `target_count` equal bins; from each bin the
/// sharpest frame within `window` frames of the bin center is kept (ties go
/// to the frame nearest the center, then the earlier one). The window is
/// clipped to the bin, so the result is strictly increasing.
pub fn select_frames(sharpness: &[f64], target_count: usize, window: usize) -> Result<Vec<usize>> {
    let n = sharpness.len();
    ensure!(target_count >= 1, "target frame count must be at least 1");
    ensure!(
        target_count <= n,
        "cannot select {target_count} frames from a sequence of {n}"
    );
    let bin_edge = |b: usize| b * n / target_count;
    Ok((0..target_count)
        .map(|b| {
            let (lo, hi) = (bin_edge(b), bin_edge(b + 1));
            let center = (2 * b + 1) * n / (2 * target_count);
            let start = center.saturating_sub(window).max(lo);
            let end = (center + window).min(hi - 1);
            (start..=end)
                .max_by(|&a, &b| {
                    sharpness[a]
                        .total_cmp(&sharpness[b])
                        .then(center.abs_diff(b).cmp(&center.abs_diff(a)))
                        .then(b.cmp(&a))
                })
                .expect("window is never empty")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn occlusion_masks() {
        let cam = EquirectCamera::new(512, 256).unwrap();
        assert_eq!(occlusion_mask(&cam, MaskKind::None).count_valid(), 131072);
        let m = occlusion_mask(&cam, MaskKind::BottomThird);
        assert_eq!(512 * 256 - m.count_valid(), 86 * 512);
        assert!(m.get(0, 169) && !m.get(0, 170) && !m.get(511, 255));
        for h in [4u32, 5, 6, 7, 90, 128] {
            let cam = EquirectCamera::new(2 * h, h).unwrap();
            let m = occlusion_mask(&cam, MaskKind::BottomThird);
            let cleared = (0..h).filter(|&y| !m.get(0, y)).count() as u32;
            assert_eq!(cleared, h.div_ceil(3));
            assert_eq!(m.count_valid() as u32, (h - cleared) * 2 * h);
        }
    }

    #[test]
    fn mask_kind_parsing_rejects_unknown() {
        #[derive(Deserialize)]
        struct Doc {
            #[allow(dead_code)]
            mask: MaskKind,
        }
        assert!(toml::from_str::<Doc>("mask = \"bottom_third\"").is_ok());
        assert!(toml::from_str::<Doc>("mask = \"top_half\"").is_err());
    }

    fn checker(w: u32, h: u32, cell: u32) -> GrayF32 {
        GrayF32::from_fn(w, h, |x, y| Luma([((x / cell + y / cell) % 2) as f32]))
    }

    #[test]
    fn sharpness_constant_is_zero() {
        let g = GrayF32::from_pixel(16, 8, Luma([0.4]));
        assert_eq!(sharpness_score(&g, None).unwrap(), 0.0);
    }

    #[test]
    fn sharpness_errors() {
        let g = GrayF32::from_pixel(1, 1, Luma([0.4]));
        assert!(sharpness_score(&g, None).is_err());
        let g = GrayF32::from_pixel(8, 8, Luma([0.4]));
        let empty = Mask::filled(8, 8, false);
        assert!(sharpness_score(&g, Some(&empty)).is_err());
    }

    #[test]
    fn sharpness_prefers_crisp_checkerboard() {
        let sharp = checker(64, 64, 8);
        let blurred = image::imageops::blur(&sharp, 2.0);
        let a = sharpness_score(&sharp, None).unwrap();
        let b = sharpness_score(&blurred, None).unwrap();
        assert!(a > b, "{a} vs {b}");
    }

    #[test]
    fn sharpness_is_shift_invariant_for_periodic_images() {
        let base = checker(64, 32, 8);
        let shifted = GrayF32::from_fn(64, 32, |x, y| *base.get_pixel((x + 13) % 64, (y + 5) % 32));
        let a = sharpness_score(&base, None).unwrap();
        let b = sharpness_score(&shifted, None).unwrap();
        assert!(((a - b) / a).abs() < 1e-9);
    }

    #[test]
    fn select_identity_and_bin_centers() {
        let s = vec![1.0; 150];
        assert_eq!(select_frames(&s, 150, 3).unwrap(), (0..150).collect::<Vec<_>>());
        let s = vec![1.0; 1000];
        let picked = select_frames(&s, 100, 0).unwrap();
        assert_eq!(picked, (0..100).map(|b| 10 * b + 5).collect::<Vec<_>>());
        assert!(select_frames(&s[..5], 6, 0).is_err());
        assert!(select_frames(&s, 0, 0).is_err());
    }

    #[test]
    fn select_avoids_blurred_frames() {
        // every 10th frame (at the bin centers) is a blurred copy
        let crisp = checker(32, 16, 4);
        let soft = image::imageops::blur(&crisp, 2.0);
        let (s_crisp, s_soft) = (
            sharpness_score(&crisp, None).unwrap(),
            sharpness_score(&soft, None).unwrap(),
        );
        let scores: Vec<f64> = (0..1000).map(|i| if i % 10 == 5 { s_soft } else { s_crisp }).collect();
        let picked = select_frames(&scores, 100, 3).unwrap();
        assert_eq!(picked.len(), 100);
        assert!(picked.iter().all(|i| i % 10 != 5));
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn stitch_uniform_gray() {
        let fe = FisheyeCamera::new(64, 64, 200f64.to_radians()).unwrap();
        let rig = RigCalibration::back_to_back(fe, fe, 0.1).unwrap();
        let gray = Rgb32FImage::from_pixel(64, 64, Rgb([128.0 / 255.0; 3]));
        let out = EquirectCamera::new(64, 32).unwrap();
        let (img, mask) = stitch_dual_fisheye(&gray, &gray, &rig, &out).unwrap();
        assert_eq!(mask.count_valid(), 64 * 32);
        for p in imaging::to_u8(&img).pixels() {
            assert_eq!(p.0, [128; 3]);
        }
    }

    #[test]
    fn stitch_hemispheres_meet_at_side_seam() {
        let fe = FisheyeCamera::new(64, 64, PI).unwrap();
        let rig = RigCalibration::back_to_back(fe, fe, 1e-9).unwrap();
        let white = Rgb32FImage::from_pixel(64, 64, Rgb([1.0; 3]));
        let black = Rgb32FImage::new(64, 64);
        let out = EquirectCamera::new(64, 32).unwrap();
        let (img, mask) = stitch_dual_fisheye(&white, &black, &rig, &out).unwrap();
        assert_eq!(mask.count_valid(), 64 * 32);
        // row at the horizon: columns with |theta| < π/2 come from the front
        let y = 16;
        for x in 0..64u32 {
            let theta = (x as f64 + 0.5) / 64.0 * 2.0 * PI - PI;
            let v = img.get_pixel(x, y).0[0];
            if theta.abs() < FRAC_PI_2 - 0.05 {
                assert_eq!(v, 1.0);
            } else if theta.abs() > FRAC_PI_2 + 0.05 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn stitch_dimension_mismatch() {
        let fe = FisheyeCamera::new(64, 64, 3.5).unwrap();
        let rig = RigCalibration::back_to_back(fe, fe, 0.1).unwrap();
        let a = Rgb32FImage::new(64, 64);
        let b = Rgb32FImage::new(32, 64);
        let out = EquirectCamera::new(64, 32).unwrap();
        assert!(stitch_dual_fisheye(&a, &b, &rig, &out).is_err());
    }

    #[test]
    fn rig_validation() {
        let narrow = FisheyeCamera::new(64, 64, 2.0).unwrap();
        assert!(RigCalibration::back_to_back(narrow, narrow, 0.1).is_err());
        let wide = FisheyeCamera::new(64, 64, 3.5).unwrap();
        assert!(RigCalibration::back_to_back(wide, wide, 0.0).is_err());
    }
}
