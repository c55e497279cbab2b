use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use super::FeatureExtractor;
use crate::error::{Error, Result};
use crate::ImageTensor;

/// Mean and shrunk covariance of one class's reference features.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Moore-Penrose pseudo-inverse of `covariance`.
    pub precision: DMatrix<f64>,
    pub shrinkage: f64,
    pub num_samples: usize,
}

/// Ledoit-Wolf shrinkage towards a scaled identity, with the empirical
/// covariance normalized by `1/N`. Identical samples give a zero covariance
/// and shrinkage 1.
pub fn ledoit_wolf_fit(samples: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} samples; need at least 2")));
    }
    let p = samples[0].len();
    if p == 0 || samples.iter().any(|s| s.len() != p) {
        return Err(Error::Shape("samples must share a positive dimension".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance sample".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| samples[i][j]);
    let mean = DVector::from_fn(p, |j, _| x.column(j).mean());
    let mut xc = x;
    for j in 0..p {
        xc.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let nf = n as f64;
    let pf = p as f64;
    let s = symmetrize(&(xc.transpose() * &xc / nf));
    let mu = s.trace() / pf;
    let x2 = xc.map(|v| v * v);
    let beta_sum = (x2.transpose() * &x2).sum();
    let delta_sum = s.map(|v| v * v).sum();
    let beta = (beta_sum / nf - delta_sum) / (pf * nf);
    let delta = (delta_sum - 2.0 * mu * s.trace() + pf * mu * mu) / pf;
    let shrinkage = if delta <= 0.0 { 1.0 } else { (beta.min(delta) / delta).clamp(0.0, 1.0) };
    let mut covariance = &s * (1.0 - shrinkage);
    for k in 0..p {
        covariance[(k, k)] += shrinkage * mu;
    }
    let covariance = symmetrize(&covariance);
    let precision = pseudo_inverse(&covariance);
    Ok(GaussianFit {
        mean,
        covariance,
        precision,
        shrinkage,
        num_samples: n,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Pseudo-inverse with singular values below `1e-12 · σ_max` treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    if max == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    symmetrize(&svd.pseudo_inverse(max * 1e-12).expect("both factors computed"))
}

/// `(P − μ)ᵀ Σ⁺ (P − μ)`, clamped at zero against rounding.
pub fn mahalanobis_sq(point: &[f64], mean: &DVector<f64>, precision: &DMatrix<f64>) -> Result<f64> {
    if point.len() != mean.len() || precision.shape() != (mean.len(), mean.len()) {
        return Err(Error::Shape(format!(
            "point {} vs mean {} and precision {:?}",
            point.len(),
            mean.len(),
            precision.shape()
        )));
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Mahalanobis input".into()));
    }
    let d = DVector::from_column_slice(point) - mean;
    Ok((d.transpose() * precision * &d)[(0, 0)].max(0.0))
}

fn unit_rows(features: &Array2<f64>) -> Array2<f64> {
    let mut out = features.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / (norm + 1e-10));
    }
    out
}

/// LPIPS-form distance between precomputed per-layer features. `weights`
/// holds one channel weight vector per layer; `None` means all ones.
pub fn lpips_features(a: &[Array2<f64>], b: &[Array2<f64>], weights: Option<&[Vec<f64>]>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} layers", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (l, (fa, fb)) in a.iter().zip(b).enumerate() {
        if fa.dim() != fb.dim() {
            return Err(Error::Shape(format!("layer {l}: {:?} vs {:?}", fa.dim(), fb.dim())));
        }
        let w = weights.map(|w| &w[l]);
        if let Some(w) = w {
            if w.len() != fa.ncols() {
                return Err(Error::Shape(format!("layer {l}: {} weights for {} channels", w.len(), fa.ncols())));
            }
        }
        let (na, nb) = (unit_rows(fa), unit_rows(fb));
        let mut layer_sum = 0.0;
        for (ra, rb) in na.rows().into_iter().zip(nb.rows()) {
            for (c, (x, y)) in ra.iter().zip(rb.iter()).enumerate() {
                let d = w.map_or(1.0, |w| w[c]) * (x - y);
                layer_sum += d * d;
            }
        }
        total += layer_sum / fa.nrows() as f64;
    }
    Ok(total)
}

/// LPIPS-form distance between two images under `extractor`.
pub fn lpips<E: FeatureExtractor + ?Sized>(
    a: &ImageTensor,
    b: &ImageTensor,
    extractor: &E,
    weights: Option<&[Vec<f64>]>,
) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("images {:?} and {:?}", a.dims(), b.dims())));
    }
    lpips_features(&extractor.extract(a)?, &extractor.extract(b)?, weights)
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}
