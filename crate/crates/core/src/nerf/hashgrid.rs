//! Multiresolution hash encoding with trilinear interpolation.
//!
//! Level `l` overlays a grid of resolution `N_l = ⌊N_min · bˡ⌋` on the unit
//! cube. The eight corners surrounding a point index that level's feature
//! table, densely when the whole `(N_l + 1)³` lattice fits into the table and
//! through a spatial hash otherwise. Corner features are blended with
//! trilinear weights and the per-level results are concatenated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{ensure, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Hash-grid hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashGridConfig {
    pub levels: u32,
    /// Entries per level; a power of two.
    pub table_size: u32,
    pub features_per_level: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            table_size: 1 << 19,
            features_per_level: 2,
            base_resolution: 16,
            max_resolution: 2048,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.levels >= 1, "hash grid needs at least one level");
        ensure!(
            self.table_size.is_power_of_two(),
            "hash table size {} is not a power of two",
            self.table_size
        );
        ensure!(self.features_per_level >= 1, "features per level must be positive");
        ensure!(
            self.base_resolution >= 1 && self.max_resolution >= self.base_resolution,
            "resolutions must satisfy 1 <= base <= max"
        );
        Ok(())
    }

    /// Geometric growth factor between consecutive levels.
    pub fn growth(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        (((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64).exp()
    }

    pub fn resolution(&self, level: u32) -> u32 {
        let scaled = self.base_resolution as f64 * self.growth().powi(level as i32);
        // the top level must land on max_resolution despite rounding in b
        (scaled * (1.0 + 1e-12)).floor() as u32
    }

    pub fn output_dim(&self) -> usize {
        (self.levels * self.features_per_level) as usize
    }
}

/// Per-level lookup geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Level {
    resolution: u32,
    dense: bool,
}

impl Level {
    #[inline]
    fn index(&self, x: u32, y: u32, z: u32, mask: u32) -> usize {
        if self.dense {
            let s = self.resolution + 1;
            (x + s * (y + s * z)) as usize
        } else {
            ((x.wrapping_mul(PRIMES[0]) ^ y.wrapping_mul(PRIMES[1]) ^ z.wrapping_mul(PRIMES[2])) & mask) as usize
        }
    }
}

/// Corner indices and trilinear weights of one point at one level.
#[derive(Debug, Clone, Copy)]
pub struct Stencil<S> {
    pub index: [usize; 8],
    pub weight: [S; 8],
    /// Fractional position inside the cell, per axis.
    pub frac: [S; 3],
}

/// Learnable feature tables, one per level, each `table_size × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid<S> {
    config: HashGridConfig,
    levels: Vec<Level>,
    pub tables: Vec<Vec<S>>,
}

impl<S: Scalar> HashGrid<S> {
    /// Grid with features drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new<R: Rng>(config: HashGridConfig, rng: &mut R) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        for table in &mut grid.tables {
            for v in table.iter_mut() {
                *v = S::lit(rng.random_range(-1e-4..=1e-4));
            }
        }
        Ok(grid)
    }

    pub fn zeros(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let levels: Vec<Level> = (0..config.levels)
            .map(|l| {
                let resolution = config.resolution(l);
                let lattice = (resolution as u64 + 1).pow(3);
                Level {
                    resolution,
                    dense: lattice <= config.table_size as u64,
                }
            })
            .collect();
        let len = (config.table_size * config.features_per_level) as usize;
        Ok(Self {
            config,
            tables: vec![vec![S::zero(); len]; levels.len()],
            levels,
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn resolution(&self, level: usize) -> u32 {
        self.levels[level].resolution
    }

    pub fn is_dense(&self, level: usize) -> bool {
        self.levels[level].dense
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn features(&self) -> usize {
        self.config.features_per_level as usize
    }

    /// Lattice corner lookup for a point in `[0, 1]³` (coordinates are
    /// clamped into the cube).
    #[inline]
    pub fn stencil(&self, level: usize, p: [S; 3]) -> Stencil<S> {
        let lv = self.levels[level];
        let res = S::from_u32(lv.resolution).unwrap();
        let mut base = [0u32; 3];
        let mut frac = [S::zero(); 3];
        for a in 0..3 {
            let x = p[a].max(S::zero()).min(S::one()) * res;
            let cell = x.floor().to_u32().unwrap().min(lv.resolution - 1);
            base[a] = cell;
            frac[a] = x - S::from_u32(cell).unwrap();
        }
        let mask = self.config.table_size - 1;
        let mut index = [0usize; 8];
        let mut weight = [S::zero(); 8];
        for (c, (idx, w)) in index.iter_mut().zip(weight.iter_mut()).enumerate() {
            let mut wc = S::one();
            let mut corner = [0u32; 3];
            for a in 0..3 {
                let hi = (c >> a) & 1 == 1;
                corner[a] = base[a] + hi as u32;
                wc *= if hi { frac[a] } else { S::one() - frac[a] };
            }
            *idx = lv.index(corner[0], corner[1], corner[2], mask);
            *w = wc;
        }
        Stencil { index, weight, frac }
    }

    /// Encode one point; writes `levels × F` features into `out`.
    #[inline]
    pub fn encode_into(&self, p: [S; 3], out: &mut [S]) {
        let f = self.features();
        for (l, table) in self.tables.iter().enumerate() {
            let st = self.stencil(l, p);
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(S::zero());
            for c in 0..8 {
                let row = &table[st.index[c] * f..(st.index[c] + 1) * f];
                for k in 0..f {
                    dst[k] += st.weight[c] * row[k];
                }
            }
        }
    }

    /// Encode a point given in `[0, 1]³`.
    pub fn encode(&self, p: [S; 3]) -> Result<Vec<S>> {
        ensure!(p.iter().all(|x| x.is_finite()), "cannot encode a non-finite position");
        let mut out = vec![S::zero(); self.output_dim()];
        self.encode_into(p, &mut out);
        Ok(out)
    }

    /// Analytic Jacobian of [`encode`](Self::encode) with respect to the
    /// normalized position, row-major `(levels·F) × 3`. Valid away from cell
    /// faces, where the encoding is piecewise trilinear.
    pub fn encode_jacobian(&self, p: [S; 3]) -> Vec<S> {
        let f = self.features();
        let mut jac = vec![S::zero(); self.output_dim() * 3];
        for (l, table) in self.tables.iter().enumerate() {
            let st = self.stencil(l, p);
            let res = S::from_u32(self.levels[l].resolution).unwrap();
            for c in 0..8 {
                let row = &table[st.index[c] * f..(st.index[c] + 1) * f];
                for a in 0..3 {
                    // ∂w/∂frac_a: replace factor a by ±1
                    let mut dw = S::one();
                    for b in 0..3 {
                        let hi = (c >> b) & 1 == 1;
                        dw *= if b == a {
                            if hi {
                                S::one()
                            } else {
                                -S::one()
                            }
                        } else if hi {
                            st.frac[b]
                        } else {
                            S::one() - st.frac[b]
                        };
                    }
                    for k in 0..f {
                        jac[(l * f + k) * 3 + a] += dw * res * row[k];
                    }
                }
            }
        }
        jac
    }

    /// Scatter encoding gradients into `grad` (same shape as `tables`) for
    /// one level, visiting samples in order.
    pub fn accumulate_level(&self, level: usize, positions: &[[S; 3]], d_enc: &[S], grad: &mut [S]) {
        let f = self.features();
        let dim = self.output_dim();
        for (n, p) in positions.iter().enumerate() {
            let g = &d_enc[n * dim + level * f..n * dim + (level + 1) * f];
            if g.iter().all(|x| x.is_zero()) {
                continue;
            }
            let st = self.stencil(level, *p);
            for c in 0..8 {
                let row = &mut grad[st.index[c] * f..(st.index[c] + 1) * f];
                for k in 0..f {
                    row[k] += st.weight[c] * g[k];
                }
            }
        }
    }
}
