//! PatchMatch stereo on equirectangular panoramas.
//!
//! Every reference pixel carries a plane hypothesis: a depth along its ray
//! and a surface normal. Patches are laid out on the unit sphere in the
//! tangent plane of the pixel ray, intersected with the hypothesis plane and
//! reprojected into the neighbor views, where zero-mean normalized cross
//! correlation scores the match.
//!
//! Sweeps alternate between rows left to right, columns top to bottom, rows
//! right to left and columns bottom to top. Inside a sweep every scan line
//! is independent: a pixel reads its predecessor on the same line from the
//! current sweep and its other neighbors from the previous one, so the
//! result does not depend on how lines are scheduled across threads.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DepthMap;
use crate::error::{ensure, Result};
use crate::geometry::{EquirectCamera, Vec3};
use crate::imaging::{luma_u8, sample_gray, GrayF32, Mask, Wrap};
use crate::ingest::PanoramaFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    /// Patch half-width in pixels, measured on the sphere.
    pub patch_radius: u32,
    /// Spacing of patch samples in pixels.
    pub patch_stride: u32,
    pub iterations: u32,
    pub d_min: f64,
    pub d_max: f64,
    /// Neighbor views per reference.
    pub neighbors: u32,
    /// Hypotheses costlier than this are reported invalid.
    pub max_cost: f64,
    /// Relative depth agreement required by the consistency check.
    pub consistency: f64,
    pub min_consistent_views: u32,
    /// Valid components smaller than this many pixels are removed.
    pub speckle_size: u32,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            patch_radius: 5,
            patch_stride: 2,
            iterations: 4,
            d_min: 0.3,
            d_max: 10.0,
            neighbors: 4,
            max_cost: 0.3,
            consistency: 0.01,
            min_consistent_views: 2,
            speckle_size: 16,
            seed: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.d_min > 0.0 && self.d_max > self.d_min && self.d_max.is_finite(),
            "depth range must satisfy 0 < d_min < d_max, got [{}, {}]",
            self.d_min,
            self.d_max
        );
        ensure!(self.neighbors >= 1, "at least one neighbor view is required");
        ensure!(self.patch_stride >= 1, "patch stride must be positive");
        ensure!((0.0..=1.0).contains(&self.max_cost), "max_cost must lie in [0, 1]");
        ensure!(self.consistency > 0.0, "consistency threshold must be positive");
        Ok(())
    }

    fn offsets(&self) -> Vec<i32> {
        let r = self.patch_radius as i32;
        (-r..=r).step_by(self.patch_stride as usize).collect()
    }
}

/// Normals may tilt at most this far from the reversed pixel ray.
const MAX_TILT_COS: f64 = 0.5;
/// Minimum patch standard deviation (intensities in [0, 1]).
const MIN_STD: f32 = 1e-3;

struct View {
    to_cam: UnitQuaternion<f64>,
    center: Vec3,
    gray: GrayF32,
    mask: Mask,
}

struct Problem {
    cam: EquirectCamera,
    center: Vec3,
    views: Vec<View>,
    /// Patch samples per pixel.
    n: usize,
    rays: Vec<Vec3>,
    /// World-frame patch directions, `n` per pixel.
    dirs: Vec<Vec3>,
    /// Zero-mean, unit-norm reference patch, `n` per pixel.
    ref_vals: Vec<f32>,
    active: Vec<bool>,
}

fn tangent_basis(r: &Vec3) -> (Vec3, Vec3) {
    let up = if r.y.abs() < 0.9 { Vec3::y() } else { Vec3::x() };
    let e1 = up.cross(r).normalize();
    (e1, r.cross(&e1))
}

/// Center and normalize `v` in place; `None` for a flat patch.
fn standardize(v: &mut [f32]) -> Option<()> {
    let n = v.len() as f32;
    let mean = v.iter().sum::<f32>() / n;
    let mut ss = 0.0;
    for x in v.iter_mut() {
        *x -= mean;
        ss += *x * *x;
    }
    if ss.sqrt() < MIN_STD * n.sqrt() {
        return None;
    }
    let inv = 1.0 / ss.sqrt();
    v.iter_mut().for_each(|x| *x *= inv);
    Some(())
}

fn gray_of(frame: &PanoramaFrame) -> GrayF32 {
    luma_u8(&frame.image)
}

impl Problem {
    fn new(reference: &PanoramaFrame, views: &[&PanoramaFrame], cfg: &MatchConfig) -> Self {
        let cam = reference.camera();
        let offsets = cfg.offsets();
        let n = offsets.len() * offsets.len();
        let a = cam.pixel_angle();
        let gray = gray_of(reference);
        let count = cam.pixel_count();
        let mut rays = Vec::with_capacity(count);
        let mut dirs = Vec::with_capacity(count * n);
        let mut ref_vals = Vec::with_capacity(count * n);
        let mut active = Vec::with_capacity(count);
        let rot = reference.pose.rotation;
        let mut buf = vec![0.0f32; n];
        for v in 0..cam.height() {
            for u in 0..cam.width() {
                let r = cam.pixel_to_direction_unchecked(u as f64, v as f64).into_inner();
                let (e1, e2) = tangent_basis(&r);
                let mut k = 0;
                for &j in &offsets {
                    for &i in &offsets {
                        let q = (r + e1 * (a * i as f64) + e2 * (a * j as f64)).normalize();
                        let (x, y) = cam.direction_to_pixel(&nalgebra::Unit::new_unchecked(q));
                        buf[k] = sample_gray(&gray, x, y, Wrap::Horizontal);
                        dirs.push(rot * q);
                        k += 1;
                    }
                }
                let ok = reference.mask.get(u, v) && standardize(&mut buf).is_some();
                ref_vals.extend_from_slice(&buf);
                rays.push(rot * r);
                active.push(ok);
            }
        }
        let views = views
            .iter()
            .map(|f| View {
                to_cam: f.pose.rotation.inverse(),
                center: f.pose.translation,
                gray: gray_of(f),
                mask: f.mask.clone(),
            })
            .collect();
        Self {
            cam,
            center: reference.pose.translation,
            views,
            n,
            rays,
            dirs,
            ref_vals,
            active,
        }
    }

    /// Mean of `(1 − ZNCC) / 2` over views that see the whole patch; 1 when
    /// the hypothesis is degenerate or no view qualifies.
    fn cost(&self, pix: usize, depth: f64, normal: &Vec3, pts: &mut Vec<Vec3>, vals: &mut [f32]) -> f32 {
        let r = &self.rays[pix];
        let ndr = normal.dot(r);
        if ndr >= -1e-9 {
            return 1.0;
        }
        let num = depth * ndr;
        pts.clear();
        for q in &self.dirs[pix * self.n..(pix + 1) * self.n] {
            let nq = normal.dot(q);
            if nq >= -1e-9 {
                return 1.0;
            }
            pts.push(self.center + q * (num / nq));
        }
        let refv = &self.ref_vals[pix * self.n..(pix + 1) * self.n];
        let (w, h) = (self.cam.width() as i64, self.cam.height() as i64);
        let mut sum = 0.0f32;
        let mut used = 0;
        'views: for view in &self.views {
            for (p, out) in pts.iter().zip(vals.iter_mut()) {
                let d = view.to_cam * (p - view.center);
                let len = d.norm();
                if len < 1e-9 {
                    continue 'views;
                }
                let theta = d.x.atan2(d.z);
                let phi = (d.y / len).clamp(-1.0, 1.0).asin();
                let (x, y) = self.cam.angles_to_pixel(theta, phi);
                let (px, py) = ((x.round() as i64).rem_euclid(w), (y.round() as i64).clamp(0, h - 1));
                if !view.mask.get(px as u32, py as u32) {
                    continue 'views;
                }
                *out = sample_gray(&view.gray, x, y, Wrap::Horizontal);
            }
            if standardize(vals).is_none() {
                continue;
            }
            let zncc: f32 = refv.iter().zip(vals.iter()).map(|(a, b)| a * b).sum();
            sum += (1.0 - zncc.clamp(-1.0, 1.0)) / 2.0;
            used += 1;
        }
        if used == 0 {
            1.0
        } else {
            sum / used as f32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hypothesis {
    depth: f64,
    normal: Vec3,
    cost: f32,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn line_rng(seed: u64, stage: u64, line: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ stage) ^ line))
}

/// Unit normal within the allowed tilt of `-r`.
fn random_normal<R: Rng>(r: &Vec3, rng: &mut R) -> Vec3 {
    let (e1, e2) = tangent_basis(r);
    let cos_t: f64 = rng.random_range(MAX_TILT_COS..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    -r * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t
}

/// Depth at which ray `r` meets the plane of hypothesis `h` seen along `r_h`.
fn transfer(h: &Hypothesis, r_h: &Vec3, r: &Vec3) -> Option<f64> {
    let ndr = h.normal.dot(r);
    if ndr >= -1e-9 || -ndr < MAX_TILT_COS - 1e-12 {
        return None;
    }
    Some(h.depth * h.normal.dot(r_h) / ndr)
}

pub(crate) fn run(
    reference: &PanoramaFrame,
    views: &[&PanoramaFrame],
    reference_id: usize,
    cfg: &MatchConfig,
    mut on_sweep: impl FnMut(&[f32]),
) -> Result<DepthMap> {
    cfg.validate()?;
    let cam = reference.camera();
    for v in views {
        ensure!(v.camera() == cam, "all frames must share the reference camera");
    }
    let p = Problem::new(reference, views, cfg);
    let (w, h) = (cam.width() as usize, cam.height() as usize);
    let (inv_lo, inv_hi) = (1.0 / cfg.d_max, 1.0 / cfg.d_min);

    // random initialization, one generator per row
    let mut state: Vec<Hypothesis> = (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            let mut rng = line_rng(cfg.seed, u64::MAX, v as u64);
            let mut pts = Vec::with_capacity(p.n);
            let mut vals = vec![0.0; p.n];
            (0..w)
                .map(|u| {
                    let pix = v * w + u;
                    let depth = 1.0 / rng.random_range(inv_lo..=inv_hi);
                    let normal = random_normal(&p.rays[pix], &mut rng);
                    let cost = if p.active[pix] {
                        p.cost(pix, depth, &normal, &mut pts, &mut vals)
                    } else {
                        1.0
                    };
                    Hypothesis { depth, normal, cost }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    for it in 0..cfg.iterations {
        let scale = 0.5f64.powi(it as i32);
        let inv_step = (inv_hi - inv_lo) * 0.25 * scale;
        let tilt = 0.5 * scale;
        let sweep = it % 4;
        let horizontal = sweep % 2 == 0;
        let forward = sweep < 2;
        let (lines, len) = if horizontal { (h, w) } else { (w, h) };
        let snapshot = state.clone();
        let updated: Vec<Vec<Hypothesis>> = (0..lines)
            .into_par_iter()
            .map(|line| {
                let mut rng = line_rng(cfg.seed, it as u64, line as u64);
                let mut pts = Vec::with_capacity(p.n);
                let mut vals = vec![0.0; p.n];
                let mut cur: Vec<Hypothesis> = Vec::with_capacity(len);
                for k in 0..len {
                    let pos = if forward { k } else { len - 1 - k };
                    let (u, v) = if horizontal { (pos, line) } else { (line, pos) };
                    let pix = v * w + u;
                    let own = snapshot[pix];
                    // always draw the perturbation so the stream stays aligned
                    let d_inv = rng.random_range(-1.0..=1.0) * inv_step;
                    let jiggle = Vec3::new(
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                    ) * tilt;
                    if !p.active[pix] {
                        cur.push(own);
                        continue;
                    }
                    let r = p.rays[pix];
                    let mut best = own;
                    let mut consider = |depth: f64, normal: Vec3, best: &mut Hypothesis| {
                        if !(cfg.d_min..=cfg.d_max).contains(&depth) {
                            return;
                        }
                        let c = p.cost(pix, depth, &normal, &mut pts, &mut vals);
                        if c < best.cost {
                            *best = Hypothesis { depth, normal, cost: c };
                        }
                    };
                    let left = (u + w - 1) % w;
                    let right = (u + 1) % w;
                    let mut neighbors: [Option<(Hypothesis, usize)>; 4] = [None; 4];
                    let nb_pix = [
                        Some(v * w + left),
                        Some(v * w + right),
                        (v > 0).then(|| (v - 1) * w + u),
                        (v + 1 < h).then(|| (v + 1) * w + u),
                    ];
                    // index of the in-line predecessor among the four
                    let pred = match (horizontal, forward) {
                        (true, true) => 0,
                        (true, false) => 1,
                        (false, true) => 2,
                        (false, false) => 3,
                    };
                    for (slot, q) in nb_pix.iter().enumerate() {
                        if let Some(q) = *q {
                            let hyp = if slot == pred && k > 0 { cur[k - 1] } else { snapshot[q] };
                            neighbors[slot] = Some((hyp, q));
                        }
                    }
                    let order = [pred, (pred + 1) % 4, (pred + 2) % 4, (pred + 3) % 4];
                    for slot in order {
                        if let Some((hyp, q)) = neighbors[slot] {
                            if !p.active[q] || hyp.cost >= 1.0 {
                                continue;
                            }
                            if let Some(d) = transfer(&hyp, &p.rays[q], &r) {
                                consider(d, hyp.normal, &mut best);
                            }
                        }
                    }
                    let cur_best = best;
                    let inv = (1.0 / cur_best.depth + d_inv).clamp(inv_lo, inv_hi);
                    let mut normal = (cur_best.normal + jiggle).normalize();
                    if !normal.iter().all(|x| x.is_finite()) || -normal.dot(&r) < MAX_TILT_COS {
                        normal = cur_best.normal;
                    }
                    consider(1.0 / inv, normal, &mut best);
                    cur.push(best);
                }
                cur
            })
            .collect();
        for (line, hyps) in updated.into_iter().enumerate() {
            for (k, hyp) in hyps.into_iter().enumerate() {
                let pos = if forward { k } else { len - 1 - k };
                let (u, v) = if horizontal { (pos, line) } else { (line, pos) };
                state[v * w + u] = hyp;
            }
        }
        let costs: Vec<f32> = state.iter().map(|s| s.cost).collect();
        on_sweep(&costs);
    }

    let mut map = DepthMap::invalid(cam.width(), cam.height(), reference_id, cfg.d_min, cfg.d_max);
    let mut matched = false;
    for (i, s) in state.iter().enumerate() {
        if s.cost < 1.0 {
            matched = true;
        }
        if p.active[i] && (s.cost as f64) <= cfg.max_cost {
            map.depth[i] = s.depth as f32;
            map.normal[i] = [s.normal.x as f32, s.normal.y as f32, s.normal.z as f32];
            map.cost[i] = s.cost;
        }
    }
    map.no_overlap = !matched;
    Ok(map)
}

/// Depth map of `frames[reference]` matched against `frames[v]` for each
/// `v` in `views`.
pub fn patchmatch_depth(
    frames: &[PanoramaFrame],
    reference: usize,
    views: &[usize],
    cfg: &MatchConfig,
) -> Result<DepthMap> {
    ensure!(reference < frames.len(), "reference index {reference} out of range");
    let vs: Vec<&PanoramaFrame> = views.iter().map(|&i| &frames[i]).collect();
    run(&frames[reference], &vs, reference, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::imaging::to_u8;
    use crate::oracle::wall_scene;

    fn wall_frames(textured: bool, w: u32) -> Vec<PanoramaFrame> {
        let scene = wall_scene(2.5, textured);
        let cam = EquirectCamera::new(w, w / 2).unwrap();
        [-0.1, 0.1]
            .iter()
            .map(|x| {
                let pose = Pose::from_translation(Vec3::new(*x, 0.0, 0.0));
                let r = scene.render_panorama_supersampled(&pose, &cam, 4).unwrap();
                PanoramaFrame::new(to_u8(&r.image), pose, Mask::filled(w, w / 2, true), 0.0, 0).unwrap()
            })
            .collect()
    }

    fn cfg() -> MatchConfig {
        MatchConfig {
            d_min: 0.5,
            d_max: 8.0,
            ..Default::default()
        }
    }

    #[test]
    fn zncc_cost_invariant_to_gain_and_bias() {
        let frames = wall_frames(true, 128);
        let mut dimmed = frames[1].clone();
        for px in dimmed.image.pixels_mut() {
            px.0 = px.0.map(|c| (c as f32 * 0.5 + 40.0) as u8);
        }
        let p1 = Problem::new(&frames[0], &[&frames[1]], &cfg());
        let p2 = Problem::new(&frames[0], &[&dimmed], &cfg());
        let (mut pts, mut vals) = (Vec::new(), vec![0.0; p1.n]);
        let pix = 32 * 128 + 64;
        let n = -p1.rays[pix];
        for d in [1.0, 2.0, 2.5, 4.0] {
            let a = p1.cost(pix, d, &n, &mut pts, &mut vals);
            let b = p2.cost(pix, d, &n, &mut pts, &mut vals);
            // exact gain/bias before quantization; u8 rounding adds noise
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn zncc_exactly_invariant_on_float_images() {
        let mut a: Vec<f32> = (0..36).map(|i| ((i * 7) % 11) as f32 / 11.0).collect();
        let mut b: Vec<f32> = a.iter().map(|x| 0.3 * x + 0.2).collect();
        standardize(&mut a).unwrap();
        standardize(&mut b).unwrap();
        let z: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((1.0 - z).abs() < 1e-6);
    }

    #[test]
    fn costs_never_increase_across_sweeps() {
        let frames = wall_frames(true, 64);
        let mut last: Option<Vec<f32>> = None;
        let c = MatchConfig { iterations: 5, ..cfg() };
        run(&frames[0], &[&frames[1]], 0, &c, |costs| {
            if let Some(prev) = &last {
                assert!(costs.iter().zip(prev).all(|(a, b)| a <= b));
            }
            last = Some(costs.to_vec());
        })
        .unwrap();
    }

    #[test]
    fn zero_iterations_is_seeded_random_init() {
        let frames = wall_frames(true, 64);
        let c = MatchConfig {
            iterations: 0,
            max_cost: 1.0,
            ..cfg()
        };
        let a = patchmatch_depth(&frames, 0, &[1], &c).unwrap();
        let b = patchmatch_depth(&frames, 0, &[1], &c).unwrap();
        assert_eq!(a, b);
        let other = patchmatch_depth(&frames, 0, &[1], &MatchConfig { seed: 9, ..c }).unwrap();
        assert_ne!(a.depth, other.depth);
        let cam = frames[0].camera();
        for (i, d) in a.depth.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            assert!((0.5..=8.0).contains(&(*d as f64)));
            let r = cam
                .pixel_to_direction((i as u32 % 64) as f64, (i as u32 / 64) as f64)
                .unwrap();
            let n = Vec3::new(a.normal[i][0] as f64, a.normal[i][1] as f64, a.normal[i][2] as f64);
            assert!(-n.dot(&r) >= MAX_TILT_COS - 1e-6);
        }
    }

    fn wall_error(textured: bool) -> (f64, f64) {
        let frames = wall_frames(textured, 512);
        let m = patchmatch_depth(&frames, 0, &[1], &cfg()).unwrap();
        let truth = wall_scene(2.5, textured)
            .render_panorama(&frames[0].pose, &frames[0].camera())
            .unwrap();
        // the wall: pixels within 45° of straight ahead
        let mut wall = 0;
        let mut errs = vec![];
        for (i, d) in truth.depth.iter().enumerate() {
            if !d.is_finite() || 2.5 / d < 45f64.to_radians().cos() {
                continue;
            }
            wall += 1;
            if m.is_valid(i) {
                errs.push((m.depth[i] as f64 - d).abs() / d);
            }
        }
        errs.sort_by(f64::total_cmp);
        let median = errs.get(errs.len() / 2).copied().unwrap_or(f64::INFINITY);
        (median, errs.len() as f64 / wall as f64)
    }

    #[test]
    fn textured_wall_depth_within_one_percent() {
        let (median, completeness) = wall_error(true);
        assert!(median <= 0.01, "median relative error {median}");
        assert!(completeness > 0.5, "completeness {completeness}");
    }

    #[test]
    fn textureless_wall_mostly_fails() {
        let (_, completeness) = wall_error(false);
        assert!(completeness < 0.5, "completeness {completeness}");
    }

    #[test]
    fn no_views_flags_map() {
        let frames = wall_frames(true, 32);
        let m = patchmatch_depth(&frames, 0, &[], &cfg()).unwrap();
        assert!(m.no_overlap);
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn plane_transfer_is_exact() {
        let n = Vec3::new(0.0, 0.0, -1.0);
        let r1 = Vec3::new(0.0, 0.0, 1.0);
        let r2 = Vec3::new(0.1, 0.0, 1.0).normalize();
        let h = Hypothesis {
            depth: 2.0,
            normal: n,
            cost: 0.0,
        };
        let d = transfer(&h, &r1, &r2).unwrap();
        assert!((d * r2.z - 2.0).abs() < 1e-12);
    }
}
