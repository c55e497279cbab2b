//! Two-dimensional embeddings of activation vectors.

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact t-SNE settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// `None` uses `max(N / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reducer {
    Tsne(TsneConfig),
    /// Projection on the two leading principal components.
    Pca,
}

impl Default for Reducer {
    fn default() -> Self {
        Reducer::Tsne(TsneConfig::default())
    }
}

impl Reducer {
    pub fn name(&self) -> &'static str {
        match self {
            Reducer::Tsne(_) => "tsne",
            Reducer::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    pub reducer: String,
    /// Perplexity actually used, after clamping; 0 for reducers without one.
    pub perplexity: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Embeds `vectors` (one row per record) into the plane.
pub fn embed_2d(vectors: &[Vec<f64>], reducer: &Reducer, seed: u64) -> Result<Embedding2D> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} records; need at least 2 to embed")));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("activation vectors differ in length".into()));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("activation vector".into()));
    }
    let mut warnings = Vec::new();
    let degenerate = vectors.iter().all(|v| v == &vectors[0]);
    if degenerate {
        let msg = "all activation vectors are identical; embedding is seeded jitter".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    let (coords, perplexity) = match reducer {
        _ if degenerate => (jitter(n, seed), 0.0),
        Reducer::Tsne(cfg) => {
            let limit = ((n - 1) as f64 / 3.0).max(1.0);
            let perplexity = cfg.perplexity.min(limit);
            if perplexity < cfg.perplexity {
                let msg = format!("perplexity {} clamped to {perplexity} for {n} records", cfg.perplexity);
                warn!("{msg}");
                warnings.push(msg);
            }
            (tsne(vectors, perplexity, cfg, seed), perplexity)
        }
        Reducer::Pca => (pca(vectors), 0.0),
    };
    Ok(Embedding2D {
        coords,
        reducer: reducer.name().to_string(),
        perplexity,
        seed,
        warnings,
    })
}

fn jitter(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid sigma");
    (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}

fn squared_distances(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vectors
        .par_iter()
        .map(|a| {
            vectors
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
                .collect()
        })
        .collect()
}

/// Conditional probabilities `p_{j|i}` for one row at the given entropy.
fn conditional_row(dist: &[f64], i: usize, target_entropy: f64) -> Vec<f64> {
    let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
    let mut row = vec![0.0; dist.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        for (j, d) in dist.iter().enumerate() {
            row[j] = if j == i { 0.0 } else { (-d * beta).exp() };
            sum += row[j];
        }
        if sum == 0.0 {
            sum = f64::MIN_POSITIVE;
        }
        let mut weighted = 0.0;
        for (j, p) in row.iter_mut().enumerate() {
            *p /= sum;
            weighted += dist[j] * *p;
        }
        let entropy = sum.ln() + beta * weighted;
        let diff = entropy - target_entropy;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    row
}

fn tsne(vectors: &[Vec<f64>], perplexity: f64, cfg: &TsneConfig, seed: u64) -> Vec<[f64; 2]> {
    let n = vectors.len();
    let dist = squared_distances(vectors);
    let target = perplexity.ln();
    let cond: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| conditional_row(&dist[i], i, target)).collect();
    let mut p = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = cond[i][j] + cond[j][i];
            total += p[i * n + j];
        }
    }
    for v in p.iter_mut() {
        *v = (*v / total).max(1e-12);
    }

    let mut y = jitter(n, seed);
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.early_exaggeration / 4.0).max(50.0));
    for iter in 0..cfg.iterations {
        let (exaggeration, momentum) = if iter < cfg.exaggeration_iterations {
            (cfg.early_exaggeration, 0.5)
        } else {
            (1.0, 0.8)
        };
        let num: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
            .collect();
        let z: f64 = num.iter().sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = num[i * n + j];
                    let q = (w / z).max(1e-12);
                    let coeff = 4.0 * (exaggeration * p[i * n + j] - q) * w;
                    g[0] += coeff * (y[i][0] - y[j][0]);
                    g[1] += coeff * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for k in 0..2 {
                let gain: f64 = if update[i][k] * grad[i][k] < 0.0 {
                    gains[i][k] + 0.2
                } else {
                    gains[i][k] * 0.8
                };
                gains[i][k] = gain.max(0.01);
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
    }
    y
}

fn pca(vectors: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let (n, d) = (vectors.len(), vectors[0].len());
    let mut x = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = vec![[0.0; 2]; n];
    for (k, &comp) in order.iter().take(2).enumerate() {
        let mut axis: Vec<f64> = v_t.row(comp).iter().copied().collect();
        // fix the sign so the largest loading is positive
        let pivot = axis.iter().copied().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, row) in out.iter_mut().enumerate() {
            row[k] = (0..d).map(|j| x[(i, j)] * axis[j]).sum();
        }
    }
    out
}
