//! Transformer building blocks with explicit forward caches and
//! input-gradient backward passes. Parameters are frozen, so only gradients
//! with respect to activations are propagated.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn random<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid sigma");
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        dy.dot(&self.weight.t())
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.weight.as_slice().expect("standard layout"));
        f(self.bias.as_slice().expect("standard layout"));
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.as_slice_mut().expect("standard layout"));
        f(self.bias.as_slice_mut().expect("standard layout"));
    }
}

/// Row-wise layer normalization with affine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
        dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
        dx * cache.inv_std.view().insert_axis(Axis(1))
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.gamma.as_slice().expect("standard layout"));
        f(self.beta.as_slice().expect("standard layout"));
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.gamma.as_slice_mut().expect("standard layout"));
        f(self.beta.as_slice_mut().expect("standard layout"));
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Post-norm transformer block:
/// `y = LN1(x + MHA(x))`, `out = LN2(y + MLP(y))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub num_heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub norm1: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub norm2: LayerNorm,
}

pub struct BlockCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    norm1: LayerNormCache,
    hidden: Array2<f64>,
    norm2: LayerNormCache,
}

impl Block {
    pub fn random<R: Rng + ?Sized>(dim: usize, hidden: usize, num_heads: usize, rng: &mut R) -> Self {
        Self {
            num_heads,
            query: Linear::random(dim, dim, rng),
            key: Linear::random(dim, dim, rng),
            value: Linear::random(dim, dim, rng),
            proj: Linear::random(dim, dim, rng),
            norm1: LayerNorm::new(dim),
            fc1: Linear::random(dim, hidden, rng),
            fc2: Linear::random(hidden, dim, rng),
            norm2: LayerNorm::new(dim),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.weight.ncols() / self.num_heads
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut mixed = Array2::zeros(x.raw_dim());
        let mut attn = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attn.push(scores);
        }
        let (y, norm1) = self.norm1.forward(&(x + &self.proj.forward(&mixed)));
        let hidden = self.fc1.forward(&y);
        let mlp = self.fc2.forward(&hidden.mapv(gelu));
        let (out, norm2) = self.norm2.forward(&(&y + &mlp));
        (
            out,
            BlockCache {
                q,
                k,
                v,
                attn,
                norm1,
                hidden,
                norm2,
            },
        )
    }

    pub fn forward_only(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    /// Gradient with respect to the block input given the gradient at its output.
    pub fn backward(&self, cache: &BlockCache, dout: &Array2<f64>) -> Array2<f64> {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let dr2 = self.norm2.backward(&cache.norm2, dout);
        let dgelu = self.fc2.backward(&dr2);
        let dhidden = dgelu * &cache.hidden.mapv(gelu_grad);
        let dy = &dr2 + &self.fc1.backward(&dhidden);
        let dr1 = self.norm1.backward(&cache.norm1, &dy);
        let dmixed = self.proj.backward(&dr1);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, a) in cache.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dmix_h = dmixed.slice(cols);
            let da = dmix_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dmix_h));
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = a * &(&da - &row_dot) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        dr1 + self.query.backward(&dq) + self.key.backward(&dk) + self.value.backward(&dv)
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        for lin in [&self.query, &self.key, &self.value, &self.proj] {
            lin.visit_params(f);
        }
        self.norm1.visit_params(f);
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
        self.norm2.visit_params(f);
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for lin in [&mut self.query, &mut self.key, &mut self.value, &mut self.proj] {
            lin.visit_params_mut(f);
        }
        self.norm1.visit_params_mut(f);
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `<w, f(x)>` against the analytic backward.
    fn check_grad(
        f: &dyn Fn(&Array2<f64>) -> Array2<f64>,
        analytic: &Array2<f64>,
        x: &Array2<f64>,
        w: &Array2<f64>,
    ) {
        let h = 1e-5;
        for idx in [(0, 0), (1, 2), (x.nrows() - 1, x.ncols() - 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = ((&f(&xp) * w).sum() - (&f(&xm) * w).sum()) / (2.0 * h);
            let err = (fd - analytic[idx]).abs() / fd.abs().max(1e-6);
            assert!(err < 1e-5, "{idx:?}: fd {fd} analytic {}", analytic[idx]);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ln = LayerNorm::new(6);
        ln.gamma = Array1::from_shape_simple_fn(6, || rng.random_range(0.5..1.5));
        ln.beta = Array1::from_shape_simple_fn(6, || rng.random_range(-0.5..0.5));
        let x = random_matrix(4, 6, &mut rng);
        let w = random_matrix(4, 6, &mut rng);
        let (_, cache) = ln.forward(&x);
        let analytic = ln.backward(&cache, &w);
        check_grad(&|x| ln.forward(x).0, &analytic, &x, &w);
    }

    #[test]
    fn block_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = Block::random(8, 16, 2, &mut rng);
        let x = random_matrix(5, 8, &mut rng);
        let w = random_matrix(5, 8, &mut rng);
        let (_, cache) = block.forward(&x);
        let analytic = block.backward(&cache, &w);
        check_grad(&|x| block.forward_only(x), &analytic, &x, &w);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = Array2::from_shape_vec((2, 3), vec![1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0]).unwrap();
        softmax_rows(&mut x);
        for row in x.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
