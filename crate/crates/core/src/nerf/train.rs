//! Gradient-based fitting of a radiance field to posed panoramas.
//!
//! Batches are drawn from one seeded generator in a fixed order, rays are
//! processed in fixed-size chunks (possibly in parallel), and every
//! reduction runs in chunk order, so the loss curve does not depend on the
//! thread count.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{Activations, FieldGrad, FieldNetwork, RadianceField};
use super::render::{composite, composite_backward, ray_interval, stratified, SampleRecord};
use super::scalar::Scalar;
use crate::error::{ensure, Result};
use crate::geometry::{EquirectCamera, Ray};
use crate::ingest::PanoramaFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rays_per_batch: u32,
    pub samples_per_ray: u32,
    pub iterations: u32,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rays_per_batch: 4096,
            samples_per_ray: 48,
            iterations: 5000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.rays_per_batch > 0, "rays_per_batch must be positive");
        ensure!(self.samples_per_ray > 0, "samples_per_ray must be positive");
        ensure!(self.iterations > 0, "iterations must be positive");
        ensure!(
            self.learning_rate > 0.0 && self.epsilon > 0.0,
            "learning rate and epsilon must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)"
        );
        Ok(())
    }
}

/// Training rays with their target colors and stratum offsets.
#[derive(Debug, Clone)]
pub struct RayBatch<S> {
    pub rays: Vec<Ray>,
    pub targets: Vec<[S; 3]>,
    pub samples_per_ray: usize,
    /// `rays.len() × samples_per_ray` offsets in `[0, 1)`.
    pub jitter: Vec<S>,
}

/// Every unmasked pixel of a frame set, addressable by a flat index.
#[derive(Debug, Clone)]
pub struct PixelPool<'a> {
    frames: &'a [PanoramaFrame],
    camera: EquirectCamera,
    pixels: Vec<(u32, u32)>,
}

impl<'a> PixelPool<'a> {
    pub fn new(frames: &'a [PanoramaFrame]) -> Result<Self> {
        ensure!(!frames.is_empty(), "training needs at least one frame");
        let camera = frames[0].camera();
        ensure!(
            frames.iter().all(|f| f.camera() == camera),
            "all training frames must share one camera"
        );
        let mut pixels = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            for (p, valid) in f.mask.as_slice().iter().enumerate() {
                if *valid {
                    pixels.push((i as u32, p as u32));
                }
            }
        }
        ensure!(
            !pixels.is_empty(),
            "every pixel of every training frame is masked; nothing to train on"
        );
        Ok(Self { frames, camera, pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Draw a batch: per ray one pixel index, then its stratum offsets.
    pub fn draw<S: Scalar, R: Rng>(&self, rays: usize, samples: usize, rng: &mut R) -> RayBatch<S> {
        let mut batch = RayBatch {
            rays: Vec::with_capacity(rays),
            targets: Vec::with_capacity(rays),
            samples_per_ray: samples,
            jitter: Vec::with_capacity(rays * samples),
        };
        let w = self.camera.width();
        for _ in 0..rays {
            let (f, p) = self.pixels[rng.random_range(0..self.pixels.len())];
            let frame = &self.frames[f as usize];
            let (u, v) = (p % w, p / w);
            let d = self.camera.pixel_to_direction_unchecked(u as f64, v as f64);
            batch
                .rays
                .push(Ray::new(frame.pose.translation, frame.pose.rotation * d));
            let px = frame.image.get_pixel(u, v).0;
            batch.targets.push(px.map(|c| S::lit(c as f64 / 255.0)));
            for _ in 0..samples {
                batch.jitter.push(S::lit(rng.random::<f64>()));
            }
        }
        batch
    }
}

/// Rays per work unit. Fixed so the reduction order never depends on the
/// number of threads.
const CHUNK_RAYS: usize = 256;

struct ChunkGrad<S> {
    loss: S,
    net: FieldNetwork<S>,
    background: [S; 3],
    positions: Vec<[S; 3]>,
    d_enc: Vec<S>,
}

fn chunk_grad<S: Scalar>(
    field: &RadianceField<S>,
    rays: &[Ray],
    targets: &[[S; 3]],
    jitter: &[S],
    samples: usize,
    total_rays: usize,
) -> ChunkGrad<S> {
    let bg = field.background();
    let mut pos = Vec::with_capacity(rays.len() * samples);
    let mut dirs = Vec::with_capacity(rays.len() * samples);
    let mut ts = Vec::with_capacity(rays.len() * samples);
    let mut deltas = Vec::with_capacity(rays.len() * samples);
    let mut spans = Vec::with_capacity(rays.len());
    let (mut t, mut delta) = (Vec::new(), Vec::new());
    for (r, ray) in rays.iter().enumerate() {
        let start = ts.len();
        if let Some((t0, t1)) = ray_interval(field, ray) {
            stratified(t0, t1, &jitter[r * samples..(r + 1) * samples], &mut t, &mut delta);
            let d = ray.direction.as_ref();
            let d = [S::lit(d.x), S::lit(d.y), S::lit(d.z)];
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

    let n = pos.len();
    let mut d_sigma = vec![S::zero(); n];
    let mut d_rgb = vec![[S::zero(); 3]; n];
    let mut d_bg = [S::zero(); 3];
    let mut loss = S::zero();
    let scale = S::lit(1.0 / (3.0 * total_rays as f64));
    let mut records: Vec<SampleRecord<S>> = Vec::with_capacity(samples);
    for (span, target) in spans.into_iter().zip(targets) {
        let s = span.clone();
        let out = composite(
            &ts[s.clone()],
            &deltas[s.clone()],
            &act.sigma[s.clone()],
            &colors[s.clone()],
            bg,
            Some(&mut records),
        );
        let mut d_color = [S::zero(); 3];
        for c in 0..3 {
            let e = out.color[c] - target[c];
            loss += e * e * scale;
            d_color[c] = S::lit(2.0) * e * scale;
        }
        let g = composite_backward(
            &records,
            &colors[s.clone()],
            bg,
            out.residual,
            d_color,
            &mut d_sigma[s.clone()],
            &mut d_rgb[s],
        );
        for c in 0..3 {
            d_bg[c] += g[c];
        }
    }

    let mut net = FieldNetwork::zeros(field.grid.output_dim(), field.net.hidden_width());
    let flat_rgb: Vec<S> = d_rgb.iter().flatten().copied().collect();
    let d_enc = act.backward(field, &d_sigma, &flat_rgb, &mut net);
    // through the logistic on the background
    let background = [0, 1, 2].map(|c| d_bg[c] * bg[c] * (S::one() - bg[c]));
    ChunkGrad {
        loss,
        net,
        background,
        positions: pos,
        d_enc,
    }
}

/// Mean squared error of the batch (over rays and channels) and its
/// gradient, accumulated into `grad`.
pub fn loss_and_grad<S: Scalar>(field: &RadianceField<S>, batch: &RayBatch<S>, grad: &mut FieldGrad<S>) -> S {
    let samples = batch.samples_per_ray;
    let total = batch.rays.len();
    let chunks: Vec<ChunkGrad<S>> = (0..total.div_ceil(CHUNK_RAYS))
        .into_par_iter()
        .map(|c| {
            let r = c * CHUNK_RAYS..((c + 1) * CHUNK_RAYS).min(total);
            chunk_grad(
                field,
                &batch.rays[r.clone()],
                &batch.targets[r.clone()],
                &batch.jitter[r.start * samples..r.end * samples],
                samples,
                total,
            )
        })
        .collect();

    let mut loss = S::zero();
    for ch in &chunks {
        loss += ch.loss;
        for (g, c) in grad.net.layers_mut().into_iter().zip(ch.net.layers()) {
            g.add_assign(c);
        }
        for k in 0..3 {
            grad.background_raw[k] += ch.background[k];
        }
    }
    grad.tables.par_iter_mut().enumerate().for_each(|(level, table)| {
        for ch in &chunks {
            field.grid.accumulate_level(level, &ch.positions, &ch.d_enc, table);
        }
    });
    loss
}

/// Adam with bias correction, updating every parameter each step.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(field: &RadianceField<S>) -> Self {
        let zeros = || field.tensors().iter().map(|t| vec![S::zero(); t.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Apply one update and reset `grad` to zero.
    pub fn step(&mut self, field: &mut RadianceField<S>, grad: &mut FieldGrad<S>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1, b2) = (S::lit(b1), S::lit(b2));
        let lr = S::lit(cfg.learning_rate / bc1);
        let inv_bc2 = S::lit(1.0 / bc2.sqrt());
        let eps = S::lit(cfg.epsilon);
        let mut params = field.tensors_mut();
        let mut grads = grad.tensors_mut();
        let work: Vec<_> = params
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .collect();
        work.into_par_iter().for_each(|((p, g), (m, v))| {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                p[i] -= lr * m[i] / (v[i].sqrt() * inv_bc2 + eps);
                g[i] = S::zero();
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: u32,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch loss at every iteration.
    pub losses: Vec<f32>,
    pub seconds: f64,
}

/// Fit `field` to the unmasked pixels of `frames`.
pub fn train(
    field: &mut RadianceField<f32>,
    frames: &[PanoramaFrame],
    cfg: &TrainConfig,
    mut progress: impl FnMut(Progress),
) -> Result<TrainReport> {
    cfg.validate()?;
    let pool = PixelPool::new(frames)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(field);
    let mut grad = field.zero_grad();
    let mut losses = Vec::with_capacity(cfg.iterations as usize);
    for it in 0..cfg.iterations {
        let batch = pool.draw::<f32, _>(cfg.rays_per_batch as usize, cfg.samples_per_ray as usize, &mut rng);
        let loss = loss_and_grad(field, &batch, &mut grad);
        ensure!(loss.is_finite(), "training diverged at iteration {it} (loss {loss})");
        adam.step(field, &mut grad, cfg);
        losses.push(loss);
        progress(Progress { iteration: it, loss });
    }
    Ok(TrainReport {
        losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}
