//! Python bindings: panorama geometry, the synthetic oracle, sharpness,
//! PLY I/O and rendering from a trained checkpoint.
//!
//! Images cross the boundary as `(width, height, bytes)` with packed RGB8
//! rows; depth as a flat row-major list of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use panorad_core::geometry::{EquirectCamera, Pose, Vec3};
use panorad_core::imaging::to_u8;
use panorad_core::ingest::sharpness_of;
use panorad_core::nerf::{checkpoint, render_panorama_view, RadianceField};
use panorad_core::oracle::{self, unit, Scene};
use panorad_core::pointcloud::PointCloud;
use panorad_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pose(quaternion: [f64; 4], translation: [f64; 3]) -> PyResult<Pose> {
    Pose::from_wxyz(quaternion, translation).map_err(err)
}

fn rgb_image(width: u32, height: u32, data: &[u8]) -> PyResult<image::RgbImage> {
    image::RgbImage::from_raw(width, height, data.to_vec()).ok_or_else(|| {
        PyValueError::new_err(format!(
            "expected {} bytes for {width}x{height} RGB",
            width * height * 3
        ))
    })
}

/// Camera-frame unit direction through equirectangular pixel `(u, v)`.
#[pyfunction]
fn pixel_to_direction(width: u32, height: u32, u: f64, v: f64) -> PyResult<(f64, f64, f64)> {
    let cam = EquirectCamera::new(width, height).map_err(err)?;
    let d = cam.pixel_to_direction(u, v).map_err(err)?;
    Ok((d.x, d.y, d.z))
}

/// Equirectangular pixel of a camera-frame direction (normalized here).
#[pyfunction]
fn direction_to_pixel(width: u32, height: u32, direction: [f64; 3]) -> PyResult<(f64, f64)> {
    let cam = EquirectCamera::new(width, height).map_err(err)?;
    let v = Vec3::from(direction);
    if !(v.norm() > 0.0) {
        return Err(PyValueError::new_err("direction must be non-zero"));
    }
    Ok(cam.direction_to_pixel(&unit(v)))
}

fn load_scene(name: &str) -> PyResult<Scene> {
    match name {
        "acceptance" => Ok(oracle::acceptance_room()),
        "wall" => Ok(oracle::wall_scene(2.5, true)),
        "textureless-wall" => Ok(oracle::wall_scene(2.5, false)),
        path => Scene::load(&PathBuf::from(path)).map_err(err),
    }
}

/// Ground-truth panorama of a built-in scene (`acceptance`, `wall`,
/// `textureless-wall`) or a scene TOML file. Returns
/// `(rgb_bytes, depth)`; depth is `inf` where no surface is hit.
#[pyfunction]
#[pyo3(signature = (scene, quaternion, translation, width, supersample=1))]
fn render_oracle<'py>(
    py: Python<'py>,
    scene: &str,
    quaternion: [f64; 4],
    translation: [f64; 3],
    width: u32,
    supersample: u32,
) -> PyResult<(Bound<'py, PyBytes>, Vec<f64>)> {
    let scene = load_scene(scene)?;
    let pose = pose(quaternion, translation)?;
    let cam = EquirectCamera::new(width, width / 2).map_err(err)?;
    let r = py
        .detach(|| scene.render_panorama_supersampled(&pose, &cam, supersample))
        .map_err(err)?;
    Ok((PyBytes::new(py, to_u8(&r.image).as_raw()), r.depth))
}

/// Laplacian-variance sharpness of a packed RGB8 image.
#[pyfunction]
fn sharpness(width: u32, height: u32, rgb: &[u8]) -> PyResult<f64> {
    sharpness_of(&rgb_image(width, height, rgb)?, None).map_err(err)
}

/// Read a PLY file: `(positions, colors)` as lists of 3-tuples.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn read_ply(path: PathBuf) -> PyResult<(Vec<[f32; 3]>, Vec<[u8; 3]>)> {
    let c = PointCloud::read_ply(&path).map_err(err)?;
    Ok((c.positions, c.colors))
}

/// Write a binary PLY with positions and colors.
#[pyfunction]
fn write_ply(path: PathBuf, positions: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> PyResult<()> {
    if positions.len() != colors.len() {
        return Err(PyValueError::new_err(format!(
            "{} positions but {} colors",
            positions.len(),
            colors.len()
        )));
    }
    PointCloud {
        positions,
        colors,
        normals: None,
    }
    .write_ply(&path)
    .map_err(err)
}

/// A trained radiance field loaded from a checkpoint.
#[pyclass(frozen)]
struct Field {
    inner: RadianceField<f32>,
}

#[pymethods]
impl Field {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).map_err(err)?,
        })
    }

    /// `((min_x, min_y, min_z), (max_x, max_y, max_z))`
    #[getter]
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let b = self.inner.bounds;
        ([b.min.x, b.min.y, b.min.z], [b.max.x, b.max.y, b.max.z])
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Render a `width × width/2` panorama; returns packed RGB8 bytes.
    #[pyo3(signature = (quaternion, translation, width, samples=48))]
    fn render<'py>(
        &self,
        py: Python<'py>,
        quaternion: [f64; 4],
        translation: [f64; 3],
        width: u32,
        samples: usize,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let pose = pose(quaternion, translation)?;
        let cam = EquirectCamera::new(width, width / 2).map_err(err)?;
        let view = py
            .detach(|| render_panorama_view(&self.inner, &pose, &cam, samples))
            .map_err(err)?;
        Ok(PyBytes::new(py, to_u8(&view.image).as_raw()))
    }
}

#[pymodule]
fn panorad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pixel_to_direction, m)?)?;
    m.add_function(wrap_pyfunction!(direction_to_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(render_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(sharpness, m)?)?;
    m.add_function(wrap_pyfunction!(read_ply, m)?)?;
    m.add_function(wrap_pyfunction!(write_ply, m)?)?;
    m.add_class::<Field>()?;
    Ok(())
}
