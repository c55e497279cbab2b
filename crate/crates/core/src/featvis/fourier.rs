//! Images parameterized by a scaled half spectrum per color channel.
//!
//! `image = sigmoid(irfft2(scale ⊙ coeffs))`, where the per-frequency scale
//! follows `1 / max(f, 1/max(H, W))^decay`, so low frequencies carry most of
//! the energy.

use std::sync::Arc;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::ImageTensor;

/// Optimizable Fourier coefficients for an `H × W` RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierImageParam {
    height: usize,
    width: usize,
    /// `[channel][u][v]` with `v < W/2 + 1`.
    coeffs: Vec<Complex64>,
    scale: Vec<f64>,
    pub seed: u64,
}

fn fft_freq(i: usize, n: usize) -> f64 {
    let i = i as f64;
    let n_f = n as f64;
    if (i as usize) < n.div_ceil(2) {
        i / n_f
    } else {
        (i - n_f) / n_f
    }
}

impl FourierImageParam {
    pub fn half_width(width: usize) -> usize {
        width / 2 + 1
    }

    /// All-zero coefficients; renders as a constant 0.5 image.
    pub fn zeros(height: usize, width: usize, decay_power: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("{height}×{width} image")));
        }
        let wh = Self::half_width(width);
        let floor = 1.0 / height.max(width) as f64;
        let norm = ((height * width) as f64).sqrt() / 4.0;
        let scale = (0..height * wh)
            .map(|k| {
                let (u, v) = (k / wh, k % wh);
                let fy = fft_freq(u, height);
                let fx = v as f64 / width as f64;
                norm / (fy * fy + fx * fx).sqrt().max(floor).powf(decay_power)
            })
            .collect();
        Ok(Self {
            height,
            width,
            coeffs: vec![Complex64::new(0.0, 0.0); 3 * height * wh],
            scale,
            seed: 0,
        })
    }

    /// Coefficients drawn from `N(0, std²)` per real and imaginary part.
    pub fn random(height: usize, width: usize, decay_power: f64, std: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(height, width, decay_power)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for c in p.coeffs.iter_mut() {
            *c = Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        p.seed = seed;
        Ok(p)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn num_real_params(&self) -> usize {
        2 * self.coeffs.len()
    }

    /// Real and imaginary parts interleaved.
    pub fn to_real(&self) -> Vec<f64> {
        self.coeffs.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn set_real(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_real_params() {
            return Err(Error::Shape(format!(
                "{} real parameters for {} coefficients",
                params.len(),
                self.coeffs.len()
            )));
        }
        for (c, pair) in self.coeffs.iter_mut().zip(params.chunks_exact(2)) {
            *c = Complex64::new(pair[0], pair[1]);
        }
        Ok(())
    }
}

/// FFT plans and scratch for one image size.
pub struct FourierRenderer {
    height: usize,
    width: usize,
    col_inv: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
}

impl FourierRenderer {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            col_inv: planner.plan_fft_inverse(height),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            row_fwd: planner.plan_fft_forward(width),
        }
    }

    fn check(&self, param: &FourierImageParam) -> Result<()> {
        if param.dims() != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "parameter for {:?}, renderer for {}×{}",
                param.dims(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// Real field from a half spectrum (one channel), normalized by `1/(HW)`.
    fn irfft2(&self, half: &[Complex64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let wh = FourierImageParam::half_width(w);
        let mut cols = vec![Complex64::new(0.0, 0.0); h * wh];
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for v in 0..wh {
            for u in 0..h {
                col[u] = half[u * wh + v];
            }
            self.col_inv.process(&mut col);
            for u in 0..h {
                cols[u * wh + v] = col[u];
            }
        }
        let mut row = vec![Complex64::new(0.0, 0.0); w];
        let mut out = vec![0.0; h * w];
        let norm = 1.0 / (h * w) as f64;
        for y in 0..h {
            for x in 0..w {
                row[x] = if x < wh {
                    cols[y * wh + x]
                } else {
                    cols[y * wh + (w - x)].conj()
                };
            }
            self.row_inv.process(&mut row);
            for x in 0..w {
                out[y * w + x] = row[x].re * norm;
            }
        }
        out
    }

    /// Unnormalized forward transform of a real field, half spectrum only.
    fn rfft2(&self, field: &[f64]) -> Vec<Complex64> {
        let (h, w) = (self.height, self.width);
        let wh = FourierImageParam::half_width(w);
        let mut rows = vec![Complex64::new(0.0, 0.0); h * wh];
        let mut row = vec![Complex64::new(0.0, 0.0); w];
        for y in 0..h {
            for x in 0..w {
                row[x] = Complex64::new(field[y * w + x], 0.0);
            }
            self.row_fwd.process(&mut row);
            rows[y * wh..(y + 1) * wh].copy_from_slice(&row[..wh]);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for v in 0..wh {
            for u in 0..h {
                col[u] = rows[u * wh + v];
            }
            self.col_fwd.process(&mut col);
            for u in 0..h {
                rows[u * wh + v] = col[u];
            }
        }
        rows
    }

    /// Pre-squash field, `H × W × 3`.
    pub fn field(&self, param: &FourierImageParam) -> Result<Array3<f64>> {
        self.check(param)?;
        let (h, w) = (self.height, self.width);
        let n = param.scale.len();
        let mut out = Array3::zeros((h, w, 3));
        for c in 0..3 {
            let scaled: Vec<Complex64> = param.coeffs[c * n..(c + 1) * n]
                .iter()
                .zip(&param.scale)
                .map(|(z, s)| z * s)
                .collect();
            let plane = self.irfft2(&scaled);
            for (k, v) in plane.into_iter().enumerate() {
                out[[k / w, k % w, c]] = v;
            }
        }
        Ok(out)
    }

    /// Renders the display-space image.
    pub fn render(&self, param: &FourierImageParam) -> Result<ImageTensor> {
        ImageTensor::new(self.field(param)?.mapv(sigmoid))
    }

    /// Coefficients whose field equals `field` exactly.
    pub fn from_field(&self, field: &Array3<f64>, decay_power: f64) -> Result<FourierImageParam> {
        let (h, w) = (self.height, self.width);
        if field.dim() != (h, w, 3) {
            return Err(Error::Shape(format!("field {:?}", field.dim())));
        }
        let mut param = FourierImageParam::zeros(h, w, decay_power)?;
        let n = param.scale.len();
        for c in 0..3 {
            let plane: Vec<f64> = (0..h * w).map(|k| field[[k / w, k % w, c]]).collect();
            let spectrum = self.rfft2(&plane);
            for (k, z) in spectrum.into_iter().enumerate() {
                param.coeffs[c * n + k] = z / param.scale[k];
            }
        }
        Ok(param)
    }

    /// Pulls a gradient with respect to the rendered image back to the
    /// coefficients, returned interleaved like [`FourierImageParam::to_real`].
    pub fn pullback(&self, param: &FourierImageParam, image: &ImageTensor, grad_image: &Array3<f64>) -> Result<Vec<f64>> {
        self.check(param)?;
        let (h, w) = (self.height, self.width);
        if grad_image.dim() != (h, w, 3) {
            return Err(Error::Shape(format!("image gradient {:?}", grad_image.dim())));
        }
        let wh = FourierImageParam::half_width(w);
        let n = param.scale.len();
        let norm = 1.0 / (h * w) as f64;
        let mut out = vec![0.0; param.num_real_params()];
        for c in 0..3 {
            let grad_field: Vec<f64> = (0..h * w)
                .map(|k| {
                    let (y, x) = (k / w, k % w);
                    let s = image.data()[[y, x, c]];
                    grad_image[[y, x, c]] * s * (1.0 - s)
                })
                .collect();
            let spectrum = self.rfft2(&grad_field);
            for (k, z) in spectrum.into_iter().enumerate() {
                let v = k % wh;
                let mirrored = if v == 0 || (w % 2 == 0 && v == w / 2) { 1.0 } else { 2.0 };
                let g = z * (mirrored * norm * param.scale[k]);
                out[2 * (c * n + k)] = g.re;
                out[2 * (c * n + k) + 1] = g.im;
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
