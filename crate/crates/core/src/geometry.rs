//! Camera models, rigid poses and ray generation.
//!
//! Axis convention shared by every module: right-handed camera frame with
//! +y up and +z forward. Longitude `theta` is measured from +z toward +x,
//! latitude `phi` is positive above the horizon. Pixel `(u, v)` addresses the
//! center of the pixel at column `u`, row `v`; rows grow downward.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;

/// Rigid transform mapping camera-frame points to world-frame points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Pose at `eye` whose forward (+z) axis points at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let dir = target - eye;
        ensure!(dir.norm() > 1e-12, "look_at: eye and target coincide");
        ensure!(
            dir.cross(&up).norm() > 1e-12,
            "look_at: viewing direction parallel to up vector"
        );
        Ok(Self::new(UnitQuaternion::face_towards(&dir, &up), eye))
    }

    /// Build from the serialized `(w, x, y, z)` quaternion and translation.
    ///
    /// The quaternion must have unit norm to within 1e-6; it is renormalized
    /// so the stored rotation satisfies the 1e-9 invariant.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        ensure!(
            q.iter().chain(t.iter()).all(|x| x.is_finite()),
            "pose contains non-finite values"
        );
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        ensure!((norm - 1.0).abs() <= 1e-6, "pose quaternion norm {norm} is not 1");
        Ok(Self::new(
            UnitQuaternion::from_quaternion(quat),
            Vec3::new(t[0], t[1], t[2]),
        ))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn transform_ray(&self, ray: &Ray) -> Ray {
        Ray {
            origin: self.transform_point(&ray.origin),
            direction: self.rotation * ray.direction,
        }
    }

    pub fn origin(&self) -> Vec3 {
        self.translation
    }

    /// Camera forward axis expressed in the world frame.
    pub fn forward(&self) -> UnitVec3 {
        self.rotation * Vector3::z_axis()
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        ensure!(
            min.iter().chain(max.iter()).all(|x| x.is_finite()),
            "box bounds must be finite"
        );
        ensure!(
            min.iter().zip(max.iter()).all(|(a, b)| a < b),
            "box min {min:?} must be strictly below max {max:?}"
        );
        Ok(Self { min, max })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.min, self.max).map(|_| ())
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn diagonal(&self) -> f64 {
        self.size().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn dilate(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    /// Entry and exit distances of a ray, if the ray meets the box ahead of
    /// its origin. The entry distance is negative when the origin is inside.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64, usize)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        for i in 0..3 {
            let inv = 1.0 / ray.direction[i];
            let mut a = (self.min[i] - ray.origin[i]) * inv;
            let mut b = (self.max[i] - ray.origin[i]) * inv;
            if a.is_nan() || b.is_nan() {
                // origin on a slab plane with a parallel ray
                if ray.origin[i] < self.min[i] || ray.origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a > t0 {
                t0 = a;
                axis = i;
            }
            t1 = t1.min(b);
        }
        (t1 >= t0.max(0.0)).then_some((t0, t1, axis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: UnitVec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: UnitVec3) -> Self {
        Self { origin, direction }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction.into_inner() * t
    }
}

/// Unit direction from longitude/latitude under the shared axis convention.
pub fn direction_from_angles(theta: f64, phi: f64) -> UnitVec3 {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Unit::new_unchecked(Vec3::new(cp * st, sp, cp * ct))
}

/// Longitude in `[-π, π)` and latitude in `[-π/2, π/2]` of a unit direction.
pub fn angles_from_direction(d: &UnitVec3) -> (f64, f64) {
    let mut theta = d.x.atan2(d.z);
    if theta >= PI {
        theta -= TAU;
    }
    let phi = d.y.clamp(-1.0, 1.0).asin();
    (theta, phi)
}

/// Equirectangular (2:1 longitude/latitude) panorama camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EquirectCamera {
    width: u32,
    height: u32,
}

impl EquirectCamera {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        ensure!(
            width == 2 * height,
            "equirectangular width {width} must be twice the height {height}"
        );
        ensure!(width >= 8, "equirectangular width {width} is below 8");
        Ok(Self { width, height })
    }

    pub fn with_height(height: u32) -> Result<Self> {
        Self::new(2 * height, height)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Angular size of one pixel (identical in both axes).
    pub fn pixel_angle(&self) -> f64 {
        TAU / self.width as f64
    }

    /// Camera-frame viewing direction through pixel `(u, v)`.
    ///
    /// Accepts `u` in `[-0.5, width)` and `v` in `[-0.5, height)`: the union
    /// of the pixel-index range and the footprint range returned by
    /// [`direction_to_pixel`](Self::direction_to_pixel).
    pub fn pixel_to_direction(&self, u: f64, v: f64) -> Result<UnitVec3> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= -0.5 && u < w && v >= -0.5 && v < h) {
            return Err(Error::domain(format!(
                "pixel ({u}, {v}) outside {}x{} panorama",
                self.width, self.height
            )));
        }
        Ok(self.pixel_to_direction_unchecked(u, v))
    }

    pub(crate) fn pixel_to_direction_unchecked(&self, u: f64, v: f64) -> UnitVec3 {
        let theta = (u + 0.5) / self.width as f64 * TAU - PI;
        let phi = FRAC_PI_2 - (v + 0.5) / self.height as f64 * PI;
        direction_from_angles(theta, phi)
    }

    /// Inverse of [`pixel_to_direction`](Self::pixel_to_direction).
    ///
    /// Longitude wraps to `[-π, π)`, so `u` lies in `[-0.5, width - 0.5)`.
    /// The poles map to `v = -0.5` and `v = height - 0.5`; `v` is clamped to
    /// that range.
    pub fn direction_to_pixel(&self, d: &UnitVec3) -> (f64, f64) {
        let (theta, phi) = angles_from_direction(d);
        self.angles_to_pixel(theta, phi)
    }

    pub(crate) fn angles_to_pixel(&self, theta: f64, phi: f64) -> (f64, f64) {
        let (w, h) = (self.width as f64, self.height as f64);
        let u = (theta + PI) / TAU * w - 0.5;
        let v = ((FRAC_PI_2 - phi) / PI * h - 0.5).clamp(-0.5, h - 0.5);
        (u, v)
    }

    /// Rays through every pixel center in row-major order, world frame.
    pub fn rays(&self, pose: &Pose) -> impl Iterator<Item = Ray> + '_ {
        let pose = *pose;
        (0..self.height).flat_map(move |v| {
            (0..self.width).map(move |u| {
                let d = self.pixel_to_direction_unchecked(u as f64, v as f64);
                Ray::new(pose.translation, pose.rotation * d)
            })
        })
    }
}

/// Equidistant (angle-proportional radius) fisheye camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyeCamera {
    width: u32,
    height: u32,
    fov: f64,
    center: [f64; 2],
}

impl FisheyeCamera {
    /// Fisheye with the optical center in the middle of the image; the
    /// image circle touches the outer pixel edges of the shorter side.
    pub fn new(width: u32, height: u32, fov: f64) -> Result<Self> {
        Self::with_center(
            width,
            height,
            fov,
            [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0],
        )
    }

    pub fn with_center(width: u32, height: u32, fov: f64, center: [f64; 2]) -> Result<Self> {
        ensure!(width > 0 && height > 0, "fisheye image must be non-empty");
        ensure!(fov > 0.0 && fov < TAU, "fisheye field of view {fov} outside (0, 2π)");
        ensure!(
            center[0] >= 0.0 && center[0] < width as f64 && center[1] >= 0.0 && center[1] < height as f64,
            "fisheye center {center:?} outside the image"
        );
        Ok(Self {
            width,
            height,
            fov,
            center,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    /// Pixels per radian of polar angle.
    pub fn focal(&self) -> f64 {
        (self.width.min(self.height) as f64 / 2.0) / (self.fov / 2.0)
    }

    /// Camera-frame direction for pixel `(u, v)`, or `None` outside the
    /// image or beyond the field of view.
    pub fn unproject(&self, u: f64, v: f64) -> Option<UnitVec3> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= -0.5 && u < w - 0.5 && v >= -0.5 && v < h - 0.5) {
            return None;
        }
        let dx = u - self.center[0];
        let dy = v - self.center[1];
        let r = dx.hypot(dy);
        let psi = r / self.focal();
        if psi > self.fov / 2.0 {
            return None;
        }
        if r == 0.0 {
            return Some(Vector3::z_axis());
        }
        let s = psi.sin();
        Some(Unit::new_normalize(Vec3::new(s * dx / r, -s * dy / r, psi.cos())))
    }

    /// Pixel position of a camera-frame direction, or `None` beyond the
    /// field of view. The result may fall outside the pixel grid when the
    /// image circle is larger than the sensor.
    pub fn project(&self, d: &UnitVec3) -> Option<(f64, f64)> {
        let psi = Self::polar_angle(d);
        if psi > self.fov / 2.0 {
            return None;
        }
        let r = psi * self.focal();
        let planar = d.x.hypot(d.y);
        if planar == 0.0 {
            return Some((self.center[0], self.center[1]));
        }
        Some((self.center[0] + r * d.x / planar, self.center[1] - r * d.y / planar))
    }

    /// Polar angle of a camera-frame direction from the optical axis.
    pub fn polar_angle(d: &UnitVec3) -> f64 {
        // atan2 keeps full precision near the axis, where acos does not
        d.x.hypot(d.y).atan2(d.z)
    }
}

/// Rectilinear camera looking down +z with +x to the right and +y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    width: u32,
    height: u32,
    /// Horizontal field of view, radians.
    fov: f64,
}

impl PinholeCamera {
    pub fn new(width: u32, height: u32, fov: f64) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, "pinhole image must be non-empty");
        ensure!(fov > 0.0 && fov < PI, "pinhole field of view {fov} rad outside (0, π)");
        Ok(Self { width, height, fov })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    /// Pixels per unit image-plane distance.
    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.fov / 2.0).tan()
    }

    pub fn pixel_to_direction(&self, u: f64, v: f64) -> UnitVec3 {
        let f = self.focal();
        Unit::new_normalize(Vec3::new(
            (u + 0.5 - self.width as f64 / 2.0) / f,
            -(v + 0.5 - self.height as f64 / 2.0) / f,
            1.0,
        ))
    }

    pub fn rays(&self, pose: &Pose) -> impl Iterator<Item = Ray> + '_ {
        let pose = *pose;
        (0..self.height).flat_map(move |v| {
            (0..self.width).map(move |u| {
                let d = self.pixel_to_direction(u as f64, v as f64);
                Ray::new(pose.translation, pose.rotation * d)
            })
        })
    }
}
