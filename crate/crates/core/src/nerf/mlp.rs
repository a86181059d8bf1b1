//! Fully connected layers evaluated on row-major sample batches.

use rand::Rng;

use super::scalar::{matmul, matmul_nt, matmul_tn, Scalar};

/// `y = x·W + b` with `W` stored `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![S::zero(); inputs * outputs],
            bias: vec![S::zero(); outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        for w in &mut layer.weight {
            *w = S::lit(rng.random_range(-limit..=limit));
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `out (n × outputs) = x (n × inputs) · W + b`.
    pub fn forward(&self, x: &[S], n: usize, out: &mut [S]) {
        for row in out[..n * self.outputs].chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        matmul(x, &self.weight, out, n, self.inputs, self.outputs, true);
    }

    /// Accumulate parameter gradients into `grad` and, when requested, write
    /// the input gradient `dx = dy · Wᵀ`.
    pub fn backward(&self, x: &[S], dy: &[S], n: usize, grad: &mut Dense<S>, dx: Option<&mut [S]>) {
        matmul_tn(x, dy, &mut grad.weight, n, self.inputs, self.outputs, true);
        for row in dy[..n * self.outputs].chunks_exact(self.outputs) {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g += *d;
            }
        }
        if let Some(dx) = dx {
            matmul_nt(dy, &self.weight, dx, n, self.outputs, self.inputs);
        }
    }

    pub fn add_assign(&mut self, other: &Dense<S>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += *b;
        }
    }

    pub fn fill_zero(&mut self) {
        self.weight.fill(S::zero());
        self.bias.fill(S::zero());
    }
}

pub fn relu_inplace<S: Scalar>(v: &mut [S]) {
    for x in v {
        if *x < S::zero() {
            *x = S::zero();
        }
    }
}

/// Zero gradient entries whose forward activation was clipped by ReLU.
pub fn relu_backward<S: Scalar>(activated: &[S], grad: &mut [S]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= S::zero() {
            *g = S::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = Dense::<f64>::glorot(3, 2, &mut rng);
        layer.bias = vec![0.3, -0.2];
        let n = 4;
        let x: Vec<f64> = (0..n * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        // loss = Σ y ⊙ c for fixed c, so dL/dy = c
        let c: Vec<f64> = (0..n * 2).map(|i| (i as f64 * 0.11).cos()).collect();
        let loss = |l: &Dense<f64>, x: &[f64]| {
            let mut y = vec![0.0; n * 2];
            l.forward(x, n, &mut y);
            y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grad = Dense::zeros(3, 2);
        let mut dx = vec![0.0; n * 3];
        layer.backward(&x, &c, n, &mut grad, Some(&mut dx));
        let h = 1e-6;
        for i in 0..layer.weight.len() {
            let mut p = layer.clone();
            p.weight[i] += h;
            let mut m = layer.clone();
            m.weight[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad.weight[i]).abs() < 1e-8);
        }
        for i in 0..2 {
            let mut p = layer.clone();
            p.bias[i] += h;
            let mut m = layer.clone();
            m.bias[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad.bias[i]).abs() < 1e-8);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8);
        }
    }
}
