//! Binary checkpoint format.
//!
//! ```text
//! "PNRF"                      4 bytes
//! version                     u32
//! levels, table_size, features_per_level,
//! base_resolution, max_resolution, hidden_width      6 × u32
//! bounds min xyz, max xyz, t_near, t_far              8 × f64
//! parameter count             u64
//! parameters                  f32 × count
//! ```
//!
//! All integers and floats are little-endian. Parameters follow
//! [`RadianceField::tensors`]: grid tables level by level, the four network
//! layers (weights then bias), then the three background logits.

use std::path::Path;

use super::field::{FieldConfig, FieldNetwork, RadianceField};
use super::hashgrid::{HashGrid, HashGridConfig};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

pub const MAGIC: &[u8; 4] = b"PNRF";
pub const VERSION: u32 = 1;

pub fn to_bytes(field: &RadianceField<f32>) -> Vec<u8> {
    let cfg = field.config();
    let g = cfg.grid;
    let mut out = Vec::with_capacity(4 * field.param_count() + 128);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        g.levels,
        g.table_size,
        g.features_per_level,
        g.base_resolution,
        g.max_resolution,
        cfg.hidden_width,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let b = &field.bounds;
    for v in [
        b.min.x,
        b.min.y,
        b.min.z,
        b.max.x,
        b.max.y,
        b.max.z,
        field.t_near,
        field.t_far,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(field.param_count() as u64).to_le_bytes());
    for t in field.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {} (needs {n} more)", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<RadianceField<f32>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a radiance-field checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported (expected {VERSION})"
        )));
    }
    let mut u = [0u32; 6];
    for v in &mut u {
        *v = r.u32()?;
    }
    let config = FieldConfig {
        grid: HashGridConfig {
            levels: u[0],
            table_size: u[1],
            features_per_level: u[2],
            base_resolution: u[3],
            max_resolution: u[4],
        },
        hidden_width: u[5],
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut f = [0f64; 8];
    for v in &mut f {
        *v = r.f64()?;
    }
    let bounds = Aabb::new(Vec3::new(f[0], f[1], f[2]), Vec3::new(f[3], f[4], f[5]))
        .map_err(|e| Error::Format(format!("checkpoint bounds: {e}")))?;

    let grid = HashGrid::<f32>::zeros(config.grid)?;
    let net = FieldNetwork::zeros(grid.output_dim(), config.hidden_width as usize);
    let mut field = RadianceField::assemble(grid, net, [0.0; 3], bounds, f[6], f[7])
        .map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    let count = r.u64()?;
    if count != field.param_count() as u64 {
        return Err(Error::Format(format!(
            "checkpoint stores {count} parameters, its config implies {}",
            field.param_count()
        )));
    }
    for t in field.tensors_mut() {
        let raw = r.take(4 * t.len())?;
        for (v, b) in t.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint parameters",
            bytes.len() - r.at
        )));
    }
    if field.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok(field)
}

pub fn save(field: &RadianceField<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_bytes(field))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RadianceField<f32>> {
    from_bytes(&std::fs::read(path)?)
}
