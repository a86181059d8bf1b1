//! Volume rendering along rays.

use image::Rgb32FImage;
use rand::Rng;
use rayon::prelude::*;

use super::field::{Activations, RadianceField};
use super::scalar::Scalar;
use crate::error::{ensure, Result};
use crate::geometry::{EquirectCamera, PinholeCamera, Pose, Ray};

/// One quadrature sample along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord<S> {
    pub t: S,
    /// Segment length δᵢ.
    pub delta: S,
    pub sigma: S,
    /// αᵢ = 1 − exp(−σᵢ·δᵢ)
    pub alpha: S,
    /// Tᵢ, transmittance before this sample.
    pub transmittance: S,
    /// Tᵢ·αᵢ
    pub weight: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedRay<S> {
    pub color: [S; 3],
    /// Expected termination distance, meters.
    pub depth: S,
    pub opacity: S,
    /// Transmittance left after the last sample.
    pub residual: S,
}

/// How sample positions are placed inside their strata.
pub enum Sampling<'a> {
    Midpoint,
    Jittered(&'a mut dyn rand::RngCore),
}

const DEPTH_EPS: f64 = 1e-10;

/// Sampled interval of a ray: `[t_near, t_far]` clipped to the scene bounds.
pub fn ray_interval<S: Scalar>(field: &RadianceField<S>, ray: &Ray) -> Option<(f64, f64)> {
    let (enter, exit, _) = field.bounds.intersect(ray)?;
    let t0 = field.t_near.max(enter);
    let t1 = field.t_far.min(exit);
    (t1 > t0).then_some((t0, t1))
}

/// Stratified sample distances. `jitter[i]` in `[0, 1)` places sample `i`
/// inside its stratum; the last segment length equals the stratum width.
pub fn stratified<S: Scalar>(t0: f64, t1: f64, jitter: &[S], t: &mut Vec<S>, delta: &mut Vec<S>) {
    let n = jitter.len();
    let step = (t1 - t0) / n as f64;
    t.clear();
    delta.clear();
    for (i, j) in jitter.iter().enumerate() {
        t.push(S::lit(t0 + (i as f64 + j.to_f64().unwrap()) * step));
    }
    for i in 0..n {
        delta.push(if i + 1 < n { t[i + 1] - t[i] } else { S::lit(step) });
    }
}

/// Alpha-composite samples front to back over the background.
pub fn composite<S: Scalar>(
    t: &[S],
    delta: &[S],
    sigma: &[S],
    colors: &[[S; 3]],
    background: [S; 3],
    records: Option<&mut Vec<SampleRecord<S>>>,
) -> RenderedRay<S> {
    let mut trans = S::one();
    let mut color = [S::zero(); 3];
    let mut depth = S::zero();
    let mut opacity = S::zero();
    let mut records = records;
    if let Some(r) = records.as_deref_mut() {
        r.clear();
    }
    for i in 0..t.len() {
        let alpha = -(-sigma[i] * delta[i]).exp_m1();
        let w = trans * alpha;
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        depth += w * t[i];
        opacity += w;
        if let Some(r) = records.as_deref_mut() {
            r.push(SampleRecord {
                t: t[i],
                delta: delta[i],
                sigma: sigma[i],
                alpha,
                transmittance: trans,
                weight: w,
            });
        }
        trans *= S::one() - alpha;
    }
    for c in 0..3 {
        color[c] += trans * background[c];
    }
    RenderedRay {
        color,
        depth: depth / opacity.max(S::lit(DEPTH_EPS)),
        opacity,
        residual: trans,
    }
}

/// Gradients of the composited color given `d_color`; writes per-sample
/// density and color gradients and returns the background gradient.
pub fn composite_backward<S: Scalar>(
    records: &[SampleRecord<S>],
    colors: &[[S; 3]],
    background: [S; 3],
    residual: S,
    d_color: [S; 3],
    d_sigma: &mut [S],
    d_rgb: &mut [[S; 3]],
) -> [S; 3] {
    let dot = |c: &[S; 3]| c[0] * d_color[0] + c[1] * d_color[1] + c[2] * d_color[2];
    // Σ_{j>i} w_j c_j + T_final·bg, projected on d_color
    let mut suffix = residual * dot(&background);
    for i in (0..records.len()).rev() {
        let r = &records[i];
        let after = r.transmittance * (S::one() - r.alpha);
        let cd = dot(&colors[i]);
        d_sigma[i] = r.delta * (after * cd - suffix);
        d_rgb[i] = d_color.map(|g| g * r.weight);
        suffix += r.weight * cd;
    }
    d_color.map(|g| g * residual)
}

fn ray_dir<S: Scalar>(ray: &Ray) -> [S; 3] {
    let d = ray.direction.as_ref();
    [S::lit(d.x), S::lit(d.y), S::lit(d.z)]
}

/// Render one ray.
pub fn render_ray<S: Scalar>(
    field: &RadianceField<S>,
    ray: &Ray,
    samples: usize,
    sampling: Sampling<'_>,
    records: Option<&mut Vec<SampleRecord<S>>>,
) -> Result<RenderedRay<S>> {
    ensure!(samples >= 1, "need at least one sample per ray");
    let bg = field.background();
    let Some((t0, t1)) = ray_interval(field, ray) else {
        if let Some(r) = records {
            r.clear();
        }
        return Ok(composite(&[], &[], &[], &[], bg, None));
    };
    let jitter: Vec<S> = match sampling {
        Sampling::Midpoint => vec![S::lit(0.5); samples],
        Sampling::Jittered(rng) => (0..samples).map(|_| S::lit(rng.random::<f64>())).collect(),
    };
    let (mut t, mut delta) = (Vec::new(), Vec::new());
    stratified(t0, t1, &jitter, &mut t, &mut delta);
    let pos: Vec<[S; 3]> = t
        .iter()
        .map(|ti| field.normalize(&ray.at(ti.to_f64().unwrap())))
        .collect();
    let dirs = vec![ray_dir(ray); samples];
    let mut act = Activations::default();
    act.forward(field, &pos, &dirs);
    let colors: Vec<[S; 3]> = act.rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(composite(&t, &delta, &act.sigma, &colors, bg, records))
}

const EVAL_CHUNK: usize = 512;

/// Render many rays at stratum midpoints, in parallel over fixed chunks.
pub fn render_rays<S: Scalar>(field: &RadianceField<S>, rays: &[Ray], samples: usize) -> Result<Vec<RenderedRay<S>>> {
    ensure!(samples >= 1, "need at least one sample per ray");
    let bg = field.background();
    let jitter = vec![S::lit(0.5); samples];
    let out = rays
        .par_chunks(EVAL_CHUNK)
        .flat_map_iter(|chunk| {
            let mut pos = Vec::with_capacity(chunk.len() * samples);
            let mut dirs = Vec::with_capacity(chunk.len() * samples);
            let mut spans = Vec::with_capacity(chunk.len());
            let mut ts = Vec::with_capacity(chunk.len() * samples);
            let mut deltas = Vec::with_capacity(chunk.len() * samples);
            let (mut t, mut delta) = (Vec::new(), Vec::new());
            for ray in chunk {
                let start = ts.len();
                if let Some((t0, t1)) = ray_interval(field, ray) {
                    stratified(t0, t1, &jitter, &mut t, &mut delta);
                    let d = ray_dir(ray);
                    for ti in &t {
                        pos.push(field.normalize(&ray.at(ti.to_f64().unwrap())));
                        dirs.push(d);
                    }
                    ts.extend_from_slice(&t);
                    deltas.extend_from_slice(&delta);
                }
                spans.push(start..ts.len());
            }
            let mut act = Activations::default();
            act.forward(field, &pos, &dirs);
            let colors: Vec<[S; 3]> = act.rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            spans
                .into_iter()
                .map(|s| {
                    composite(
                        &ts[s.clone()],
                        &deltas[s.clone()],
                        &act.sigma[s.clone()],
                        &colors[s],
                        bg,
                        None,
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(out)
}

/// A rendered image with per-pixel opacity and expected depth.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Rgb32FImage,
    pub opacity: Vec<f32>,
    pub depth: Vec<f32>,
}

fn assemble_view<S: Scalar>(width: u32, height: u32, rendered: Vec<RenderedRay<S>>) -> RenderedView {
    let mut image = Rgb32FImage::new(width, height);
    let mut opacity = Vec::with_capacity(rendered.len());
    let mut depth = Vec::with_capacity(rendered.len());
    for (px, r) in image.pixels_mut().zip(&rendered) {
        px.0 = r.color.map(|c| c.to_f32().unwrap());
        opacity.push(r.opacity.to_f32().unwrap());
        depth.push(r.depth.to_f32().unwrap());
    }
    RenderedView { image, opacity, depth }
}

/// Render an equirectangular view from `pose` at stratum midpoints.
pub fn render_panorama_view<S: Scalar>(
    field: &RadianceField<S>,
    pose: &Pose,
    cam: &EquirectCamera,
    samples: usize,
) -> Result<RenderedView> {
    let rays: Vec<Ray> = cam.rays(pose).collect();
    Ok(assemble_view(
        cam.width(),
        cam.height(),
        render_rays(field, &rays, samples)?,
    ))
}

/// Render a pinhole view from `pose` at stratum midpoints.
pub fn render_pinhole_view<S: Scalar>(
    field: &RadianceField<S>,
    pose: &Pose,
    cam: &PinholeCamera,
    samples: usize,
) -> Result<RenderedView> {
    let rays: Vec<Ray> = cam.rays(pose).collect();
    Ok(assemble_view(
        cam.width(),
        cam.height(),
        render_rays(field, &rays, samples)?,
    ))
}
