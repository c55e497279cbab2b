use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Backbone, VisionTransformer};
use crate::data::{ClassMap, Normalization};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::ImageTensor;

/// `logits = weight · f + bias`, with `weight` of shape `C × D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearHead {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            weight: Array2::zeros((num_classes, dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn random(num_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid sigma");
        Self {
            weight: Array2::from_shape_simple_fn((num_classes, dim), || normal.sample(&mut rng)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (self.weight.dot(&ndarray::ArrayView1::from(features)) + &self.bias).to_vec()
    }

    pub fn row(&self, class: usize) -> Vec<f64> {
        self.weight.row(class).to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Logits and per-layer cls tokens of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedForward {
    /// Pre-softmax class scores.
    pub logits: Vec<f64>,
    /// `L × D`.
    pub cls_by_layer: Array2<f64>,
    pub tokens: Option<Vec<Array2<f64>>>,
}

/// A frozen backbone, its trainable linear head and the input normalization.
#[derive(Debug, Clone)]
pub struct Classifier<B = VisionTransformer> {
    pub backbone: B,
    pub head: LinearHead,
    pub normalization: Normalization,
    pub class_map: ClassMap,
}

impl<B: Backbone> Classifier<B> {
    pub fn new(backbone: B, head: LinearHead, normalization: Normalization, class_map: ClassMap) -> Result<Self> {
        if head.num_classes() != class_map.len() {
            return Err(Error::Shape(format!(
                "head has {} classes, class map {}",
                head.num_classes(),
                class_map.len()
            )));
        }
        if head.dim() != backbone.spec().token_dim {
            return Err(Error::Shape(format!(
                "head dim {} != token dim {}",
                head.dim(),
                backbone.spec().token_dim
            )));
        }
        Ok(Self {
            backbone,
            head,
            normalization,
            class_map,
        })
    }

    /// Hash of backbone parameters, head, normalization and class codes.
    pub fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str(&self.backbone.fingerprint())
            .f64s(self.head.weight.as_slice().expect("standard layout"))
            .f64s(self.head.bias.as_slice().expect("standard layout"))
            .f64s(&self.normalization.mean)
            .f64s(&self.normalization.std);
        for code in self.class_map.codes() {
            fp.str(code);
        }
        fp.finish()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn num_layers(&self) -> usize {
        self.backbone.spec().num_layers
    }

    pub fn input_size(&self) -> usize {
        self.backbone.spec().input_size
    }

    pub fn normalize(&self, image: &ImageTensor) -> Array3<f64> {
        self.normalization.apply(image)
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(Error::OutOfRange {
                what: "class",
                index: class,
                limit: self.num_classes(),
            });
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.num_layers() {
            return Err(Error::OutOfRange {
                what: "layer",
                index: layer,
                limit: self.num_layers(),
            });
        }
        Ok(())
    }

    /// Forward pass on a normalized input with every layer's cls token.
    pub fn forward_with_capture(&self, input: &Array3<f64>, keep_tokens: bool) -> Result<CapturedForward> {
        let out = self.backbone.forward(input, keep_tokens)?;
        let logits = self.head.logits(&out.final_cls());
        Ok(CapturedForward {
            logits,
            cls_by_layer: out.cls_by_layer,
            tokens: out.tokens,
        })
    }

    /// Normalizes a display-space image, then runs [`Self::forward_with_capture`].
    pub fn forward_image(&self, image: &ImageTensor) -> Result<CapturedForward> {
        self.forward_with_capture(&self.normalize(image), false)
    }

    pub fn final_features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.backbone.forward(&self.normalize(image), false)?.final_cls())
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<usize> {
        Ok(argmax(&self.forward_image(image)?.logits))
    }

    /// The pre-softmax logit of `class` and its gradient with respect to the
    /// cls token captured at `layer`, differentiated through the remaining
    /// blocks and the head.
    pub fn class_logit_and_grad(&self, input: &Array3<f64>, layer: usize, class: usize) -> Result<(f64, Vec<f64>)> {
        self.check_layer(layer)?;
        self.check_class(class)?;
        let row = self.head.row(class);
        let (_, grads) = self.backbone.cls_pullback(input, layer, &[&row])?;
        let logits = self.forward_with_capture(input, false)?.logits;
        Ok((logits[class], grads.into_iter().next().expect("one cotangent")))
    }

    /// The cls token at `layer` and `⟨f, ∇_f logit_c⟩` for every class `c`.
    pub fn attribution(&self, input: &Array3<f64>, layer: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_layer(layer)?;
        let rows: Vec<Vec<f64>> = (0..self.num_classes()).map(|c| self.head.row(c)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (f, grads) = self.backbone.cls_pullback(input, layer, &refs)?;
        let scores = grads.iter().map(|g| dot(&f, g)).collect();
        Ok((f, scores))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Display-only conversion of logits to probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
