//! The radiance field: hash encoding feeding a density branch and a
//! view-dependent color branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hashgrid::{HashGrid, HashGridConfig};
use super::mlp::{relu_backward, relu_inplace, Dense};
use super::scalar::{sigmoid, softplus, Scalar};
use super::sh::{self, SH_DIM};
use crate::error::{ensure, Result};
use crate::geometry::{Aabb, Vec3};

/// Geometry features passed from the density branch to the color branch.
pub const GEO_DIM: usize = 15;
const DENSITY_OUT: usize = 1 + GEO_DIM;
const COLOR_IN: usize = GEO_DIM + SH_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    #[serde(default)]
    pub grid: HashGridConfig,
    #[serde(default = "default_hidden")]
    pub hidden_width: u32,
}

fn default_hidden() -> u32 {
    64
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden_width: default_hidden(),
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        ensure!(self.hidden_width >= 1, "hidden width must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldNetwork<S> {
    pub density_hidden: Dense<S>,
    pub density_out: Dense<S>,
    pub color_hidden: Dense<S>,
    pub color_out: Dense<S>,
}

impl<S: Scalar> FieldNetwork<S> {
    pub fn zeros(encoding_dim: usize, hidden: usize) -> Self {
        Self {
            density_hidden: Dense::zeros(encoding_dim, hidden),
            density_out: Dense::zeros(hidden, DENSITY_OUT),
            color_hidden: Dense::zeros(COLOR_IN, hidden),
            color_out: Dense::zeros(hidden, 3),
        }
    }

    pub fn glorot<R: Rng>(encoding_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            density_hidden: Dense::glorot(encoding_dim, hidden, rng),
            density_out: Dense::glorot(hidden, DENSITY_OUT, rng),
            color_hidden: Dense::glorot(COLOR_IN, hidden, rng),
            color_out: Dense::glorot(hidden, 3, rng),
        }
    }

    /// Layers in storage order.
    pub fn layers(&self) -> [&Dense<S>; 4] {
        [
            &self.density_hidden,
            &self.density_out,
            &self.color_hidden,
            &self.color_out,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense<S>; 4] {
        [
            &mut self.density_hidden,
            &mut self.density_out,
            &mut self.color_hidden,
            &mut self.color_out,
        ]
    }

    pub fn hidden_width(&self) -> usize {
        self.density_hidden.outputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField<S> {
    pub grid: HashGrid<S>,
    pub net: FieldNetwork<S>,
    /// Background color before the logistic.
    pub background_raw: [S; 3],
    pub bounds: Aabb,
    pub t_near: f64,
    pub t_far: f64,
}

/// Output of a point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<S> {
    pub sigma: S,
    pub color: [S; 3],
}

impl<S: Scalar> RadianceField<S> {
    pub fn new<R: Rng>(config: FieldConfig, bounds: Aabb, t_near: f64, t_far: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let grid = HashGrid::new(config.grid, rng)?;
        let net = FieldNetwork::glorot(grid.output_dim(), config.hidden_width as usize, rng);
        Self::assemble(grid, net, [S::zero(); 3], bounds, t_near, t_far)
    }

    /// A field with every parameter zero: density `ln 2` inside the bounds,
    /// color and background mid-gray.
    pub fn zeros(config: FieldConfig, bounds: Aabb, t_near: f64, t_far: f64) -> Result<Self> {
        config.validate()?;
        let grid = HashGrid::zeros(config.grid)?;
        let net = FieldNetwork::zeros(grid.output_dim(), config.hidden_width as usize);
        Self::assemble(grid, net, [S::zero(); 3], bounds, t_near, t_far)
    }

    pub fn assemble(
        grid: HashGrid<S>,
        net: FieldNetwork<S>,
        background_raw: [S; 3],
        bounds: Aabb,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self> {
        bounds.validate()?;
        ensure!(
            t_near > 0.0 && t_far > t_near && t_far.is_finite(),
            "near/far must satisfy 0 < t_near < t_far, got {t_near}, {t_far}"
        );
        ensure!(
            net.density_hidden.inputs == grid.output_dim(),
            "network expects {} encoding features, grid produces {}",
            net.density_hidden.inputs,
            grid.output_dim()
        );
        Ok(Self {
            grid,
            net,
            background_raw,
            bounds,
            t_near,
            t_far,
        })
    }

    pub fn config(&self) -> FieldConfig {
        FieldConfig {
            grid: *self.grid.config(),
            hidden_width: self.net.hidden_width() as u32,
        }
    }

    pub fn background(&self) -> [S; 3] {
        self.background_raw.map(sigmoid)
    }

    /// Position mapped into the unit cube spanned by the bounds.
    pub fn normalize(&self, p: &Vec3) -> [S; 3] {
        let size = self.bounds.size();
        [0, 1, 2].map(|a| S::lit((p[a] - self.bounds.min[a]) / size[a]))
    }

    /// Density and color at `p` seen along unit direction `d`.
    pub fn query(&self, p: &Vec3, d: &Vec3) -> FieldSample<S> {
        if !self.bounds.contains(p) || !p.iter().all(|x| x.is_finite()) {
            return FieldSample {
                sigma: S::zero(),
                color: self.background(),
            };
        }
        let mut act = Activations::default();
        act.forward(self, &[self.normalize(p)], &[[S::lit(d.x), S::lit(d.y), S::lit(d.z)]]);
        FieldSample {
            sigma: act.sigma[0],
            color: [act.rgb[0], act.rgb[1], act.rgb[2]],
        }
    }

    /// Cast to another precision.
    pub fn cast<T: Scalar>(&self) -> RadianceField<T> {
        let conv = |v: &[S]| -> Vec<T> { v.iter().map(|x| T::lit(x.to_f64().unwrap())).collect() };
        let mut grid = HashGrid::<T>::zeros(*self.grid.config()).expect("valid config");
        for (dst, src) in grid.tables.iter_mut().zip(&self.grid.tables) {
            *dst = conv(src);
        }
        let layer = |l: &Dense<S>| Dense {
            inputs: l.inputs,
            outputs: l.outputs,
            weight: conv(&l.weight),
            bias: conv(&l.bias),
        };
        RadianceField {
            grid,
            net: FieldNetwork {
                density_hidden: layer(&self.net.density_hidden),
                density_out: layer(&self.net.density_out),
                color_hidden: layer(&self.net.color_hidden),
                color_out: layer(&self.net.color_out),
            },
            background_raw: self.background_raw.map(|x| T::lit(x.to_f64().unwrap())),
            bounds: self.bounds,
            t_near: self.t_near,
            t_far: self.t_far,
        }
    }

    /// Every parameter tensor in checkpoint order: grid levels, then
    /// network layers (weight, bias), then the background.
    pub fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = self.grid.tables.iter().map(|t| t.as_slice()).collect();
        for l in self.net.layers() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.background_raw);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = self.grid.tables.iter_mut().map(|t| t.as_mut_slice()).collect();
        for l in self.net.layers_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.background_raw);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// A zeroed gradient with this field's shapes.
    pub fn zero_grad(&self) -> FieldGrad<S> {
        FieldGrad {
            tables: self.grid.tables.iter().map(|t| vec![S::zero(); t.len()]).collect(),
            net: FieldNetwork::zeros(self.grid.output_dim(), self.net.hidden_width()),
            background_raw: [S::zero(); 3],
        }
    }
}

/// Gradient of a scalar loss with respect to every field parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad<S> {
    pub tables: Vec<Vec<S>>,
    pub net: FieldNetwork<S>,
    pub background_raw: [S; 3],
}

impl<S: Scalar> FieldGrad<S> {
    /// Same order as [`RadianceField::tensors`].
    pub fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = self.tables.iter().map(|t| t.as_slice()).collect();
        for l in self.net.layers() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.background_raw);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = self.tables.iter_mut().map(|t| t.as_mut_slice()).collect();
        for l in self.net.layers_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.background_raw);
        out
    }
}

/// Intermediate values of a batched forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct Activations<S> {
    pub n: usize,
    pub enc: Vec<S>,
    pub h1: Vec<S>,
    pub dout: Vec<S>,
    pub cin: Vec<S>,
    pub h2: Vec<S>,
    pub rgb: Vec<S>,
    pub sigma: Vec<S>,
}

fn resize<S: Scalar>(v: &mut Vec<S>, len: usize) {
    v.clear();
    v.resize(len, S::zero());
}

impl<S: Scalar> Activations<S> {
    /// Evaluate the network on normalized positions and unit directions.
    pub fn forward(&mut self, field: &RadianceField<S>, pos: &[[S; 3]], dirs: &[[S; 3]]) {
        let n = pos.len();
        let net = &field.net;
        let hidden = net.hidden_width();
        let dim = field.grid.output_dim();
        self.n = n;
        resize(&mut self.enc, n * dim);
        resize(&mut self.h1, n * hidden);
        resize(&mut self.dout, n * DENSITY_OUT);
        resize(&mut self.cin, n * COLOR_IN);
        resize(&mut self.h2, n * hidden);
        resize(&mut self.rgb, n * 3);
        resize(&mut self.sigma, n);

        for (p, row) in pos.iter().zip(self.enc.chunks_exact_mut(dim)) {
            field.grid.encode_into(*p, row);
        }
        net.density_hidden.forward(&self.enc, n, &mut self.h1);
        relu_inplace(&mut self.h1);
        net.density_out.forward(&self.h1, n, &mut self.dout);
        for i in 0..n {
            let out = &self.dout[i * DENSITY_OUT..(i + 1) * DENSITY_OUT];
            self.sigma[i] = softplus(out[0]);
            let row = i * COLOR_IN;
            self.cin[row..row + GEO_DIM].copy_from_slice(&out[1..]);
            if i > 0 && dirs[i] == dirs[i - 1] {
                // samples along one ray share their direction encoding
                self.cin.copy_within(row - SH_DIM..row, row + GEO_DIM);
            } else {
                sh::encode(dirs[i], &mut self.cin[row + GEO_DIM..row + COLOR_IN]);
            }
        }
        net.color_hidden.forward(&self.cin, n, &mut self.h2);
        relu_inplace(&mut self.h2);
        net.color_out.forward(&self.h2, n, &mut self.rgb);
        for c in &mut self.rgb {
            *c = sigmoid(*c);
        }
    }

    /// Backpropagate `d_sigma` (n) and `d_rgb` (n × 3) into the network
    /// gradient, returning the encoding gradient (n × L·F).
    pub fn backward(&self, field: &RadianceField<S>, d_sigma: &[S], d_rgb: &[S], grad: &mut FieldNetwork<S>) -> Vec<S> {
        let n = self.n;
        let net = &field.net;
        let hidden = net.hidden_width();
        let dim = field.grid.output_dim();

        let mut dz: Vec<S> = d_rgb
            .iter()
            .zip(&self.rgb)
            .map(|(g, c)| *g * *c * (S::one() - *c))
            .collect();
        let mut dh2 = vec![S::zero(); n * hidden];
        net.color_out
            .backward(&self.h2, &dz, n, &mut grad.color_out, Some(&mut dh2));
        relu_backward(&self.h2, &mut dh2);
        let mut dcin = vec![S::zero(); n * COLOR_IN];
        net.color_hidden
            .backward(&self.cin, &dh2, n, &mut grad.color_hidden, Some(&mut dcin));

        dz.clear();
        dz.resize(n * DENSITY_OUT, S::zero());
        for i in 0..n {
            let row = &mut dz[i * DENSITY_OUT..(i + 1) * DENSITY_OUT];
            row[0] = d_sigma[i] * sigmoid(self.dout[i * DENSITY_OUT]);
            row[1..].copy_from_slice(&dcin[i * COLOR_IN..i * COLOR_IN + GEO_DIM]);
        }
        let mut dh1 = vec![S::zero(); n * hidden];
        net.density_out
            .backward(&self.h1, &dz, n, &mut grad.density_out, Some(&mut dh1));
        relu_backward(&self.h1, &mut dh1);
        let mut denc = vec![S::zero(); n * dim];
        net.density_hidden
            .backward(&self.enc, &dh1, n, &mut grad.density_hidden, Some(&mut denc));
        denc
    }
}
