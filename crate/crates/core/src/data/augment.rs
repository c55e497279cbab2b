use ndarray::{s, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ImageTensor;

/// Training-time augmentation settings.
///
/// Rotations are restricted to multiples of 90° so no interpolation or
/// padding is involved. Jitter ranges are relative: a range `r` samples a
/// factor uniformly from `[1 - r, 1 + r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Allowed rotations in quarter turns (0..=3).
    pub quarter_turns: Vec<u8>,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub crop: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            quarter_turns: vec![0, 1, 2, 3],
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            crop: None,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn disabled() -> Self {
        Self {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            quarter_turns: vec![0],
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            crop: None,
        }
    }

    /// Draws concrete parameters for one image of size `height × width`.
    pub fn sample<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> Result<AugmentParams> {
        let crop = match self.crop {
            Some(size) if size > height || size > width => {
                return Err(Error::InvalidArgument(format!(
                    "crop {size} larger than {height}×{width} input"
                )))
            }
            Some(size) => Some((
                rng.random_range(0..=height - size),
                rng.random_range(0..=width - size),
                size,
            )),
            None => None,
        };
        let mut factor = |r: f64| if r > 0.0 { rng.random_range(1.0 - r..=1.0 + r) } else { 1.0 };
        let brightness = factor(self.brightness);
        let contrast = factor(self.contrast);
        let saturation = factor(self.saturation);
        let hflip = self.hflip_prob > 0.0 && rng.random_bool(self.hflip_prob.min(1.0));
        let vflip = self.vflip_prob > 0.0 && rng.random_bool(self.vflip_prob.min(1.0));
        let quarter_turns = if self.quarter_turns.is_empty() {
            0
        } else {
            self.quarter_turns[rng.random_range(0..self.quarter_turns.len())] % 4
        };
        Ok(AugmentParams {
            crop,
            hflip,
            vflip,
            quarter_turns,
            brightness,
            contrast,
            saturation,
        })
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    /// `(top, left, size)`.
    pub crop: Option<(usize, usize, usize)>,
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            crop: None,
            hflip: false,
            vflip: false,
            quarter_turns: 0,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
        }
    }

    /// Crop, flips, rotation, then brightness/contrast/saturation; output clamped.
    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let mut data = image.data().clone();
        if let Some((top, left, size)) = self.crop {
            let (h, w) = image.dims();
            if top + size > h || left + size > w {
                return Err(Error::InvalidArgument(format!("crop window exceeds {h}×{w} input")));
            }
            data = data.slice(s![top..top + size, left..left + size, ..]).to_owned();
        }
        if self.hflip {
            data.invert_axis(Axis(1));
        }
        if self.vflip {
            data.invert_axis(Axis(0));
        }
        for _ in 0..self.quarter_turns % 4 {
            data = rotate_quarter(&data);
        }
        if self.brightness != 1.0 {
            data.mapv_inplace(|v| (v * self.brightness).clamp(0.0, 1.0));
        }
        if self.contrast != 1.0 {
            let mean = gray(&data).mean().unwrap_or(0.0);
            data.mapv_inplace(|v| ((v - mean) * self.contrast + mean).clamp(0.0, 1.0));
        }
        if self.saturation != 1.0 {
            let g = gray(&data);
            for ((y, x, _), v) in data.indexed_iter_mut() {
                *v = ((*v - g[[y, x]]) * self.saturation + g[[y, x]]).clamp(0.0, 1.0);
            }
        }
        ImageTensor::from_clamped(data.as_standard_layout().to_owned())
    }
}

/// Samples parameters from `cfg` and applies them.
pub fn augment<R: Rng + ?Sized>(image: &ImageTensor, cfg: &AugmentConfig, rng: &mut R) -> Result<ImageTensor> {
    let (h, w) = image.dims();
    cfg.sample(h, w, rng)?.apply(image)
}

/// Counter-clockwise quarter turn.
fn rotate_quarter(data: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = data.dim();
    Array3::from_shape_fn((w, h, c), |(y, x, ch)| data[[x, w - 1 - y, ch]])
}

fn gray(data: &Array3<f64>) -> ndarray::Array2<f64> {
    let (h, w, _) = data.dim();
    ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * data[[y, x, 0]] + 0.587 * data[[y, x, 1]] + 0.114 * data[[y, x, 2]]
    })
}
