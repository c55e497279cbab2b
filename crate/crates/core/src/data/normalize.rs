use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ImageTensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Per-channel affine input normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self::imagenet()
    }
}

impl Normalization {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if let Some(s) = std.iter().find(|s| !s.is_finite() || **s <= 0.0) {
            return Err(Error::InvalidArgument(format!("normalization std must be > 0, got {s}")));
        }
        Ok(Self { mean, std })
    }

    pub fn imagenet() -> Self {
        Self {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn apply(&self, image: &ImageTensor) -> Array3<f64> {
        let mut out = image.data().clone();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            *v = (*v - self.mean[c]) / self.std[c];
        }
        out
    }

    pub fn invert(&self, data: &Array3<f64>) -> Array3<f64> {
        let mut out = data.clone();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            *v = *v * self.std[c] + self.mean[c];
        }
        out
    }
}

/// `(x - mean[c]) / std[c]` per channel.
pub fn normalize(image: &ImageTensor, mean: [f64; 3], std: [f64; 3]) -> Result<Array3<f64>> {
    Ok(Normalization::new(mean, std)?.apply(image))
}

/// Inverse of [`normalize`].
pub fn denormalize(data: &Array3<f64>, mean: [f64; 3], std: [f64; 3]) -> Result<Array3<f64>> {
    Ok(Normalization::new(mean, std)?.invert(data))
}
