use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::Backbone;
use crate::ImageTensor;

/// Shape of one layer's features: positions (tokens or pixels) × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub positions: usize,
    pub channels: usize,
}

/// Deterministic image features used by the perceptual and statistical metrics.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Shapes for an image of `height × width`.
    fn layer_shapes(&self, height: usize, width: usize) -> Vec<LayerShape>;

    /// Per-layer `positions × channels` features of a display-space image.
    fn extract(&self, image: &ImageTensor) -> Result<Vec<Array2<f64>>>;

    /// Final flat representation.
    fn embedding(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

/// Every block's token grid, with the final cls token as the embedding.
pub struct BackboneExtractor<'a, B> {
    pub backbone: &'a B,
    pub normalization: Normalization,
    pub name: String,
}

impl<'a, B: Backbone> BackboneExtractor<'a, B> {
    pub fn new(backbone: &'a B, normalization: Normalization) -> Self {
        Self {
            backbone,
            normalization,
            name: "backbone".to_string(),
        }
    }
}

impl<B: Backbone> FeatureExtractor for BackboneExtractor<'_, B> {
    fn name(&self) -> &str {
        &self.name
    }

    fn layer_shapes(&self, _height: usize, _width: usize) -> Vec<LayerShape> {
        let spec = self.backbone.spec();
        vec![
            LayerShape {
                positions: spec.num_tokens(),
                channels: spec.token_dim,
            };
            spec.num_layers
        ]
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<Array2<f64>>> {
        let out = self.backbone.forward(&self.normalization.apply(image), true)?;
        out.tokens
            .ok_or_else(|| Error::InvalidArgument("backbone did not return tokens".into()))
    }

    fn embedding(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.backbone.forward(&self.normalization.apply(image), false)?.final_cls())
    }
}

/// A fixed random convolutional network: 3×3 stride-2 convolutions with ReLU,
/// globally average-pooled for the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConvExtractor {
    /// `out × in × 3 × 3` per layer.
    kernels: Vec<Array4<f64>>,
    biases: Vec<Vec<f64>>,
    normalization: Normalization,
    name: String,
}

impl RandomConvExtractor {
    pub fn new(channels: &[usize], seed: u64) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::InvalidArgument(format!("channel list {channels:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = 3;
        for &out in channels {
            let normal = Normal::new(0.0, (2.0 / (9 * fan_in) as f64).sqrt()).expect("valid sigma");
            kernels.push(Array4::from_shape_simple_fn((out, fan_in, 3, 3), || normal.sample(&mut rng)));
            biases.push((0..out).map(|_| 0.01 * normal.sample(&mut rng)).collect());
            fan_in = out;
        }
        Ok(Self {
            kernels,
            biases,
            normalization: Normalization::imagenet(),
            name: format!("randconv{}-s{seed}", channels.len()),
        })
    }

    fn conv(&self, layer: usize, input: &Array3<f64>) -> Array3<f64> {
        let (h, w, _) = input.dim();
        let k = &self.kernels[layer];
        let (out_c, in_c, _, _) = k.dim();
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = Array3::zeros((oh, ow, out_c));
        for y in 0..oh {
            for x in 0..ow {
                for o in 0..out_c {
                    let mut acc = self.biases[layer][o];
                    for dy in 0..3 {
                        for dx in 0..3 {
                            // zero padding of one pixel
                            let (sy, sx) = ((2 * y + dy) as isize - 1, (2 * x + dx) as isize - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for c in 0..in_c {
                                acc += k[[o, c, dy, dx]] * input[[sy as usize, sx as usize, c]];
                            }
                        }
                    }
                    out[[y, x, o]] = acc.max(0.0);
                }
            }
        }
        out
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn layer_shapes(&self, mut height: usize, mut width: usize) -> Vec<LayerShape> {
        self.kernels
            .iter()
            .map(|k| {
                height = height.div_ceil(2);
                width = width.div_ceil(2);
                LayerShape {
                    positions: height * width,
                    channels: k.dim().0,
                }
            })
            .collect()
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<Array2<f64>>> {
        let mut x = self.normalization.apply(image);
        let mut out = Vec::with_capacity(self.kernels.len());
        for layer in 0..self.kernels.len() {
            x = self.conv(layer, &x);
            let (h, w, c) = x.dim();
            out.push(
                x.clone()
                    .into_shape_with_order((h * w, c))
                    .map_err(|e| Error::Shape(e.to_string()))?,
            );
        }
        Ok(out)
    }

    fn embedding(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let last = self.extract(image)?.pop().expect("at least one layer");
        Ok(last.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec())
    }
}
