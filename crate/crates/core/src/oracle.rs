//! Analytic ray-traced scenes with exact depth and poses.
//!
//! Scenes are unions of axis-aligned boxes and spheres with procedural
//! albedo, lit by a fixed ambient term plus one directional light. Every
//! rendered pixel comes with its exact hit distance, which is the ground
//! truth the reconstruction stages are measured against.

use std::f64::consts::TAU;
use std::path::Path;

use image::{Rgb, Rgb32FImage};
use nalgebra::Unit;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{Aabb, EquirectCamera, FisheyeCamera, Pose, Ray, UnitVec3, Vec3};

pub const AMBIENT: f64 = 0.3;
pub const DIFFUSE: f64 = 0.7;
pub const DEFAULT_CHECKER_PERIOD: f64 = 0.25;
/// Longest wavelength of the single-wall stereo texture.
pub const WALL_WAVELENGTH: f64 = 0.3;

/// Surface reflectance pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Albedo {
    Solid([f64; 3]),
    /// 3D checkerboard alternating between two colors every `period` meters.
    Checker {
        colors: [[f64; 3]; 2],
        period: f64,
    },
    /// Blend of the two colors driven by four plane waves with incommensurate
    /// wavelengths (the longest is `wavelength` meters). The pattern never
    /// repeats, so stereo matching has no periodic ambiguity.
    Waves {
        colors: [[f64; 3]; 2],
        wavelength: f64,
    },
}

const WAVES: [([f64; 3], f64, f64); 4] = [
    ([0.8, 0.36, 0.48], 1.0, 0.0),
    ([-0.3, 0.9, 0.32], 0.618, 1.3),
    ([0.5, -0.5, 0.707], 0.414, 2.1),
    ([-0.62, -0.44, 0.65], 0.273, 0.7),
];

impl Albedo {
    fn at(&self, p: &Vec3) -> [f64; 3] {
        match self {
            Albedo::Solid(c) => *c,
            Albedo::Checker { colors, period } => {
                let parity = p.iter().map(|x| (x / period).floor() as i64).sum::<i64>();
                colors[parity.rem_euclid(2) as usize]
            }
            Albedo::Waves { colors, wavelength } => {
                let v: f64 = WAVES
                    .iter()
                    .map(|(dir, scale, phase)| {
                        let d = Vec3::from(*dir).normalize();
                        (std::f64::consts::TAU * d.dot(p) / (wavelength * scale) + phase).sin()
                    })
                    .sum();
                let t = (0.5 + 0.25 * v).clamp(0.0, 1.0);
                [0, 1, 2].map(|k| colors[0][k] + (colors[1][k] - colors[0][k]) * t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Box { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Albedo,
}

/// Ray hit: distance along the (unit) ray and outward surface normal.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Primitive {
    pub fn new(shape: Shape, albedo: Albedo) -> Self {
        Self { shape, albedo }
    }

    pub fn aabb(&self) -> Aabb {
        match &self.shape {
            Shape::Box { min, max } => Aabb { min: *min, max: *max },
            Shape::Sphere { center, radius } => Aabb {
                min: center - Vec3::repeat(*radius),
                max: center + Vec3::repeat(*radius),
            },
        }
    }

    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        match &self.shape {
            Shape::Box { min, max } => {
                let b = Aabb { min: *min, max: *max };
                let (t0, _, axis) = b.intersect(ray)?;
                if t0 <= 0.0 {
                    return None;
                }
                let mut normal = Vec3::zeros();
                normal[axis] = -ray.direction[axis].signum();
                Some(Hit { t: t0, normal })
            }
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // numerically stable smaller root
                let t = if b > 0.0 { c / (-b - sq) } else { -b - sq };
                if !(t > 0.0) {
                    return None;
                }
                let normal = (ray.at(t) - center) / *radius;
                Some(Hit { t, normal })
            }
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.signed_distance(p) < 0.0
    }

    /// Signed distance to the surface, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match &self.shape {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { min, max } => {
                let c = (min + max) / 2.0;
                let h = (max - min) / 2.0;
                let q = (p - c).abs() - h;
                let outside = q.map(|x| x.max(0.0)).norm();
                let inside = q.max().min(0.0);
                outside + inside
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.shape {
            Shape::Box { min, max } => {
                Aabb::new(*min, *max)?;
            }
            Shape::Sphere { center, radius } => {
                ensure!(
                    center.iter().all(|x| x.is_finite()) && *radius > 0.0,
                    "sphere needs a finite center and positive radius"
                );
            }
        }
        match self.albedo {
            Albedo::Checker { period, .. } => ensure!(period > 0.0, "checker period must be positive, got {period}"),
            Albedo::Waves { wavelength, .. } => {
                ensure!(wavelength > 0.0, "wave length must be positive, got {wavelength}")
            }
            Albedo::Solid(_) => {}
        }
        Ok(())
    }
}

/// Scene description as read from and written to scene documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub background: [f64; 3],
    /// Direction toward the light, world frame. Normalized on use.
    #[serde(default = "default_light")]
    pub light: Vec3,
    pub bounds: Aabb,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

fn default_light() -> Vec3 {
    Vec3::new(0.3, 1.0, 0.5)
}

/// Exact rendering of one view.
#[derive(Debug, Clone)]
pub struct GroundTruthRender {
    pub image: Rgb32FImage,
    /// Row-major distance along each pixel ray; `+inf` where nothing is hit.
    pub depth: Vec<f64>,
    pub pose: Pose,
}

impl GroundTruthRender {
    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.image.width() as usize + x as usize]
    }
}

impl Scene {
    pub fn new(bounds: Aabb, background: [f64; 3]) -> Self {
        Self {
            background,
            light: default_light(),
            bounds,
            primitives: Vec::new(),
        }
    }

    pub fn with(mut self, primitive: Primitive) -> Self {
        self.primitives.push(primitive);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        ensure!(self.light.norm() > 0.0, "light direction must be non-zero");
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate().map_err(|e| Error::domain(format!("primitive {i}: {e}")))?;
            ensure!(
                self.bounds.contains_box(&p.aabb()),
                "primitive {i} extends outside the scene bounds"
            );
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn is_inside_primitive(&self, p: &Vec3) -> bool {
        self.primitives.iter().any(|q| q.contains(p))
    }

    /// Unsigned distance from `p` to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|q| q.signed_distance(p).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest hit over all primitives, with the index of the primitive.
    pub fn intersect(&self, ray: &Ray) -> Option<(usize, Hit)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(ray).map(|h| (i, h)))
            .min_by(|a, b| a.1.t.total_cmp(&b.1.t))
    }

    /// Shaded color and hit distance for one world-frame ray.
    pub fn trace(&self, ray: &Ray) -> ([f64; 3], f64) {
        match self.intersect(ray) {
            None => (self.background, f64::INFINITY),
            Some((i, hit)) => {
                let prim = &self.primitives[i];
                let p = ray.at(hit.t);
                // evaluate the pattern just inside the surface so faces lying
                // on checker cell boundaries get a stable color
                let probe = match &prim.albedo {
                    Albedo::Checker { period, .. } => p - hit.normal * (period * 1e-4),
                    _ => p,
                };
                let albedo = prim.albedo.at(&probe);
                let l = self.light.normalize();
                let shade = AMBIENT + DIFFUSE * hit.normal.dot(&l).max(0.0);
                (albedo.map(|a| (a * shade).clamp(0.0, 1.0)), hit.t)
            }
        }
    }

    fn check_camera(&self, pose: &Pose) -> Result<()> {
        let o = pose.origin();
        ensure!(
            !self.is_inside_primitive(&o),
            "camera at {:?} is inside a primitive",
            o.as_slice()
        );
        Ok(())
    }

    pub fn render_panorama(&self, pose: &Pose, cam: &EquirectCamera) -> Result<GroundTruthRender> {
        self.render_panorama_supersampled(pose, cam, 1)
    }

    /// Panorama whose pixel colors average an `n`×`n` grid of sub-pixel
    /// rays. Depth still comes from the pixel-center ray.
    pub fn render_panorama_supersampled(&self, pose: &Pose, cam: &EquirectCamera, n: u32) -> Result<GroundTruthRender> {
        ensure!(n >= 1, "supersampling factor must be at least 1");
        self.check_camera(pose)?;
        let (w, h) = (cam.width(), cam.height());
        let offsets: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64 - 0.5).collect();
        let pixels: Vec<([f64; 3], f64)> = (0..w as usize * h as usize)
            .into_par_iter()
            .map(|i| {
                let (u, v) = ((i % w as usize) as f64, (i / w as usize) as f64);
                let d = cam.pixel_to_direction_unchecked(u, v);
                let center = self.trace(&Ray::new(pose.origin(), pose.rotation * d));
                if n == 1 {
                    return center;
                }
                let mut acc = [0.0; 3];
                for dv in &offsets {
                    for du in &offsets {
                        let d = cam.pixel_to_direction_unchecked(u + du, v + dv);
                        let (c, _) = self.trace(&Ray::new(pose.origin(), pose.rotation * d));
                        (0..3).for_each(|k| acc[k] += c[k]);
                    }
                }
                let inv = 1.0 / (n * n) as f64;
                (acc.map(|c| c * inv), center.1)
            })
            .collect();
        Ok(assemble(w, h, pixels, *pose))
    }

    /// Fisheye rendering. Pixels outside the image circle are black with
    /// infinite depth.
    pub fn render_fisheye(&self, pose: &Pose, cam: &FisheyeCamera) -> Result<GroundTruthRender> {
        self.check_camera(pose)?;
        let (w, h) = (cam.width(), cam.height());
        let pixels: Vec<([f64; 3], f64)> = (0..w as usize * h as usize)
            .into_par_iter()
            .map(|i| {
                let (u, v) = ((i % w as usize) as f64, (i / w as usize) as f64);
                match cam.unproject(u, v) {
                    Some(d) => self.trace(&Ray::new(pose.origin(), pose.rotation * d)),
                    None => ([0.0; 3], f64::INFINITY),
                }
            })
            .collect();
        Ok(assemble(w, h, pixels, *pose))
    }

    pub fn make_trajectory(&self, n: usize, kind: &Trajectory) -> Result<Vec<Pose>> {
        ensure!(n >= 1, "trajectory needs at least one pose");
        let c = self.bounds.center();
        let poses = match *kind {
            Trajectory::Orbit { radius, height } => {
                ensure!(radius > 0.0, "orbit radius must be positive");
                let hub = c + Vec3::new(0.0, height, 0.0);
                (0..n)
                    .map(|k| {
                        let a = TAU * k as f64 / n as f64;
                        let eye = hub + radius * Vec3::new(a.cos(), 0.0, a.sin());
                        Pose::look_at(eye, hub, Vec3::y())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Trajectory::Lawnmower { margin, height } => {
                let size = self.bounds.size();
                ensure!(
                    margin >= 0.0 && 2.0 * margin < size.x && 2.0 * margin < size.z,
                    "lawnmower margin {margin} leaves no room inside the bounds"
                );
                let rows = ((n as f64).sqrt().round() as usize).max(1);
                let cols = n.div_ceil(rows);
                let lerp = |lo: f64, hi: f64, k: usize, count: usize| {
                    if count == 1 {
                        (lo + hi) / 2.0
                    } else {
                        lo + (hi - lo) * k as f64 / (count - 1) as f64
                    }
                };
                let (x0, x1) = (self.bounds.min.x + margin, self.bounds.max.x - margin);
                let (z0, z1) = (self.bounds.min.z + margin, self.bounds.max.z - margin);
                (0..n)
                    .map(|k| {
                        let (row, mut col) = (k / cols, k % cols);
                        if row % 2 == 1 {
                            col = cols - 1 - col;
                        }
                        Pose::from_translation(Vec3::new(
                            lerp(x0, x1, col, cols),
                            c.y + height,
                            lerp(z0, z1, row, rows),
                        ))
                    })
                    .collect()
            }
        };
        for (k, p) in poses.iter().enumerate() {
            let o = p.origin();
            ensure!(
                self.bounds.contains(&o),
                "trajectory pose {k} at {:?} leaves the scene bounds",
                o.as_slice()
            );
            ensure!(
                !self.is_inside_primitive(&o) && self.surface_distance(&o) > 0.05,
                "trajectory pose {k} at {:?} collides with a primitive",
                o.as_slice()
            );
        }
        Ok(poses)
    }
}

fn assemble(w: u32, h: u32, pixels: Vec<([f64; 3], f64)>, pose: Pose) -> GroundTruthRender {
    let mut image = Rgb32FImage::new(w, h);
    let mut depth = Vec::with_capacity(pixels.len());
    for (i, (c, t)) in pixels.into_iter().enumerate() {
        image.put_pixel(i as u32 % w, i as u32 / w, Rgb([c[0] as f32, c[1] as f32, c[2] as f32]));
        depth.push(t);
    }
    GroundTruthRender { image, depth, pose }
}

/// Camera path shapes for synthetic capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum Trajectory {
    /// Circle around the bounds center at vertical offset `height`, every
    /// camera looking at the circle's hub. Pose `k` sits at angle `2πk/n`
    /// measured from +x toward +z.
    Orbit { radius: f64, height: f64 },
    /// Serpentine grid over the floor plan shrunk by `margin`, identity
    /// orientation, at vertical offset `height` from the bounds center.
    Lawnmower { margin: f64, height: f64 },
}

fn wall(min: [f64; 3], max: [f64; 3], albedo: Albedo) -> Primitive {
    Primitive::new(
        Shape::Box {
            min: Vec3::from(min),
            max: Vec3::from(max),
        },
        albedo,
    )
}

fn checker(a: [f64; 3], b: [f64; 3]) -> Albedo {
    Albedo::Checker {
        colors: [a, b],
        period: DEFAULT_CHECKER_PERIOD,
    }
}

/// Closed room of inner size `size` (x, y, z) centered at the origin, built
/// from six 0.1 m slabs, each with its own albedo.
pub fn room(size: [f64; 3], albedos: [Albedo; 6]) -> Scene {
    let t = 0.1;
    let h = Vec3::from(size) / 2.0;
    let [xn, xp, yn, yp, zn, zp] = albedos;
    let slabs = [
        wall([-h.x - t, -h.y, -h.z], [-h.x, h.y, h.z], xn),
        wall([h.x, -h.y, -h.z], [h.x + t, h.y, h.z], xp),
        wall([-h.x - t, -h.y - t, -h.z - t], [h.x + t, -h.y, h.z + t], yn),
        wall([-h.x - t, h.y, -h.z - t], [h.x + t, h.y + t, h.z + t], yp),
        wall([-h.x, -h.y, -h.z - t], [h.x, h.y, -h.z], zn),
        wall([-h.x, -h.y, h.z], [h.x, h.y, h.z + t], zp),
    ];
    let bounds = Aabb {
        min: -h - Vec3::repeat(t),
        max: h + Vec3::repeat(t),
    };
    let mut scene = Scene::new(bounds, [0.0; 3]);
    scene.primitives.extend(slabs);
    scene
}

/// The standard benchmark scene: a 4 × 3 × 5 m checker-textured room with
/// one box on the floor and one sphere.
pub fn acceptance_room() -> Scene {
    let walls = [
        checker([0.85, 0.55, 0.45], [0.45, 0.25, 0.2]),
        checker([0.45, 0.75, 0.5], [0.2, 0.4, 0.25]),
        checker([0.8, 0.8, 0.75], [0.35, 0.35, 0.3]),
        checker([0.75, 0.8, 0.9], [0.35, 0.4, 0.5]),
        checker([0.85, 0.8, 0.45], [0.45, 0.4, 0.15]),
        checker([0.55, 0.6, 0.9], [0.2, 0.25, 0.5]),
    ];
    room([4.0, 3.0, 5.0], walls)
        .with(Primitive::new(
            Shape::Box {
                min: Vec3::new(0.6, -1.5, 0.8),
                max: Vec3::new(1.4, -0.7, 1.6),
            },
            checker([0.9, 0.9, 0.9], [0.6, 0.15, 0.15]),
        ))
        .with(Primitive::new(
            Shape::Sphere {
                center: Vec3::new(-1.0, -0.9, -1.0),
                radius: 0.6,
            },
            checker([0.3, 0.8, 0.8], [0.1, 0.3, 0.4]),
        ))
}

/// Poses of the benchmark capture: 20 orbit and 20 lawnmower panoramas.
pub fn acceptance_trajectory(scene: &Scene) -> Result<Vec<Pose>> {
    let mut poses = scene.make_trajectory(
        20,
        &Trajectory::Orbit {
            radius: 1.3,
            height: 0.3,
        },
    )?;
    poses.extend(scene.make_trajectory(
        20,
        &Trajectory::Lawnmower {
            margin: 0.7,
            height: -0.1,
        },
    )?);
    Ok(poses)
}

/// A single vertical wall facing the origin at `distance` meters along +z,
/// textured or uniform, inside a large dark box.
pub fn wall_scene(distance: f64, textured: bool) -> Scene {
    let albedo = if textured {
        Albedo::Waves {
            colors: [[0.9, 0.85, 0.8], [0.25, 0.2, 0.2]],
            wavelength: WALL_WAVELENGTH,
        }
    } else {
        Albedo::Solid([0.7, 0.7, 0.7])
    };
    let bounds = Aabb {
        min: Vec3::new(-6.0, -6.0, -6.0),
        max: Vec3::new(6.0, 6.0, distance + 0.2),
    };
    let mut scene = Scene::new(bounds, [0.0; 3]);
    scene
        .primitives
        .push(wall([-5.0, -5.0, distance], [5.0, 5.0, distance + 0.1], albedo));
    scene
}

/// Unit vector helper for callers building directions by hand.
pub fn unit(v: Vec3) -> UnitVec3 {
    Unit::new_normalize(v)
}
