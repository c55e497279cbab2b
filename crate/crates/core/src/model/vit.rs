use ndarray::{s, Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{Block, BlockCache, Linear};
use super::BackboneSpec;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

/// Per-layer outputs of a backbone forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    /// `L × D`; row `l` is the cls token after block `l`.
    pub cls_by_layer: Array2<f64>,
    /// Full `T × D` token grids per layer, when requested.
    pub tokens: Option<Vec<Array2<f64>>>,
}

impl BackboneOutput {
    pub fn final_cls(&self) -> Vec<f64> {
        self.cls_by_layer.row(self.cls_by_layer.nrows() - 1).to_vec()
    }
}

/// A frozen feature backbone that exposes per-layer cls tokens.
///
/// Gradient methods are optional; inference-only backbones keep the default
/// implementations, which report [`Error::GradientUnavailable`].
pub trait Backbone: Send + Sync {
    fn spec(&self) -> &BackboneSpec;

    /// Runs the model on a normalized `S × S × 3` input.
    fn forward(&self, input: &Array3<f64>, keep_tokens: bool) -> Result<BackboneOutput>;

    /// Pulls cotangents of the final cls token back to the cls token of `layer`.
    ///
    /// Returns the layer's cls token and, for every cotangent `v`, the gradient
    /// of `<v, final cls>` with respect to that token.
    fn cls_pullback(
        &self,
        _input: &Array3<f64>,
        _layer: usize,
        _cotangents: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        Err(Error::GradientUnavailable("backbone is inference-only".into()))
    }

    /// Pulls a cotangent of the `layer` cls token back to the input.
    ///
    /// `cotangent` receives the forward value of that token and returns the
    /// gradient of the objective with respect to it.
    fn input_pullback(
        &self,
        _input: &Array3<f64>,
        _layer: usize,
        _cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Array3<f64>)> {
        Err(Error::GradientUnavailable("backbone is inference-only".into()))
    }

    /// Hash of the parameters.
    fn fingerprint(&self) -> String;
}

/// A small vision transformer with a learned cls token, learned positional
/// embeddings and post-norm blocks. The captured activation of layer `l` is
/// the cls row of block `l`'s normalized output, which is also the input of
/// block `l + 1`; the last one feeds the classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionTransformer {
    pub spec: BackboneSpec,
    pub patch_embed: Linear,
    pub cls_token: Array1<f64>,
    pub pos_embed: Array2<f64>,
    pub blocks: Vec<Block>,
}

impl VisionTransformer {
    /// Seeded random initialization.
    pub fn random(spec: BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.token_dim;
        let small = Normal::new(0.0, 0.02).expect("valid sigma");
        let patch_embed = Linear::random(spec.patch_dim(), d, &mut rng);
        let cls_token = Array1::from_shape_simple_fn(d, || small.sample(&mut rng));
        let pos_embed = Array2::from_shape_simple_fn((spec.num_tokens(), d), || small.sample(&mut rng));
        let blocks = (0..spec.num_layers)
            .map(|_| Block::random(d, spec.hidden_dim(), spec.num_heads, &mut rng))
            .collect();
        Ok(Self {
            spec,
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
        })
    }

    fn check_input(&self, input: &Array3<f64>) -> Result<()> {
        let n = self.spec.input_size;
        if input.dim() != (n, n, 3) {
            return Err(Error::Shape(format!(
                "backbone expects {n}×{n}×3 input, got {:?}",
                input.dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backbone input".into()));
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.spec.num_layers {
            return Err(Error::OutOfRange {
                what: "layer",
                index: layer,
                limit: self.spec.num_layers,
            });
        }
        Ok(())
    }

    /// `(grid², 3·P²)` patch matrix; each row is a patch flattened as (dy, dx, c).
    fn patchify(&self, input: &Array3<f64>) -> Array2<f64> {
        let p = self.spec.patch_size;
        let g = self.spec.grid();
        Array2::from_shape_fn((g * g, self.spec.patch_dim()), |(t, k)| {
            let (py, px) = (t / g, t % g);
            let (dy, rest) = (k / (3 * p), k % (3 * p));
            let (dx, c) = (rest / 3, rest % 3);
            input[[py * p + dy, px * p + dx, c]]
        })
    }

    fn unpatchify(&self, patches: &Array2<f64>) -> Array3<f64> {
        let p = self.spec.patch_size;
        let g = self.spec.grid();
        let n = self.spec.input_size;
        Array3::from_shape_fn((n, n, 3), |(y, x, c)| {
            let t = (y / p) * g + x / p;
            let k = (y % p) * 3 * p + (x % p) * 3 + c;
            patches[[t, k]]
        })
    }

    /// Token matrix entering block 0.
    pub fn embed(&self, input: &Array3<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let patch_tokens = self.patch_embed.forward(&self.patchify(input));
        let mut tokens = Array2::zeros((self.spec.num_tokens(), self.spec.token_dim));
        tokens.row_mut(0).assign(&self.cls_token);
        tokens.slice_mut(s![1.., ..]).assign(&patch_tokens);
        tokens += &self.pos_embed;
        Ok(tokens)
    }

    /// Runs blocks `start..L` on the output of block `start - 1` (or on the
    /// embedding when `start == 0`) and returns the final token grid.
    pub fn forward_tokens_from(&self, start: usize, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        if start > self.spec.num_layers {
            return Err(Error::OutOfRange {
                what: "layer",
                index: start,
                limit: self.spec.num_layers + 1,
            });
        }
        if tokens.dim() != (self.spec.num_tokens(), self.spec.token_dim) {
            return Err(Error::Shape(format!("token grid {:?}", tokens.dim())));
        }
        let mut x = tokens.clone();
        for block in &self.blocks[start..] {
            x = block.forward_only(&x);
        }
        Ok(x)
    }

    fn forward_cached(&self, input: &Array3<f64>, upto: usize) -> Result<(Vec<Array2<f64>>, Vec<BlockCache>)> {
        let mut x = self.embed(input)?;
        let mut outputs = Vec::with_capacity(upto + 1);
        let mut caches = Vec::with_capacity(upto + 1);
        for block in &self.blocks[..=upto] {
            let (out, cache) = block.forward(&x);
            caches.push(cache);
            outputs.push(out.clone());
            x = out;
        }
        Ok((outputs, caches))
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        self.patch_embed.visit_params(f);
        f(self.cls_token.as_slice().expect("standard layout"));
        f(self.pos_embed.as_slice().expect("standard layout"));
        for b in &self.blocks {
            b.visit_params(f);
        }
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.patch_embed.visit_params_mut(f);
        f(self.cls_token.as_slice_mut().expect("standard layout"));
        f(self.pos_embed.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            b.visit_params_mut(f);
        }
    }
}

impl Backbone for VisionTransformer {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn forward(&self, input: &Array3<f64>, keep_tokens: bool) -> Result<BackboneOutput> {
        let mut x = self.embed(input)?;
        let mut cls = Array2::zeros((self.spec.num_layers, self.spec.token_dim));
        let mut tokens = keep_tokens.then(Vec::new);
        for (l, block) in self.blocks.iter().enumerate() {
            x = block.forward_only(&x);
            cls.row_mut(l).assign(&x.row(0));
            if let Some(t) = tokens.as_mut() {
                t.push(x.clone());
            }
        }
        Ok(BackboneOutput {
            cls_by_layer: cls,
            tokens,
        })
    }

    fn cls_pullback(
        &self,
        input: &Array3<f64>,
        layer: usize,
        cotangents: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_layer(layer)?;
        let d = self.spec.token_dim;
        if let Some(bad) = cotangents.iter().find(|c| c.len() != d) {
            return Err(Error::Shape(format!("cotangent length {} != {d}", bad.len())));
        }
        let last = self.spec.num_layers - 1;
        let (outputs, caches) = self.forward_cached(input, last)?;
        let cls = outputs[layer].row(0).to_vec();
        let grads = cotangents
            .iter()
            .map(|cot| {
                let mut grad = Array2::zeros((self.spec.num_tokens(), d));
                grad.row_mut(0).assign(&ndarray::ArrayView1::from(*cot));
                for l in (layer + 1..=last).rev() {
                    grad = self.blocks[l].backward(&caches[l], &grad);
                }
                grad.row(0).to_vec()
            })
            .collect();
        Ok((cls, grads))
    }

    fn input_pullback(
        &self,
        input: &Array3<f64>,
        layer: usize,
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Array3<f64>)> {
        self.check_layer(layer)?;
        let (outputs, caches) = self.forward_cached(input, layer)?;
        let cls = outputs[layer].row(0).to_vec();
        let cot = cotangent(&cls)?;
        if cot.len() != self.spec.token_dim {
            return Err(Error::Shape(format!("cotangent length {}", cot.len())));
        }
        let mut grad = Array2::zeros((self.spec.num_tokens(), self.spec.token_dim));
        grad.row_mut(0).assign(&Array1::from(cot));
        for l in (0..=layer).rev() {
            grad = self.blocks[l].backward(&caches[l], &grad);
        }
        // cls and positional embeddings are constants with respect to the input
        let dpatches = self.patch_embed.backward(&grad.slice(s![1.., ..]).to_owned());
        Ok((cls, self.unpatchify(&dpatches)))
    }

    fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str("vit").u64(self.spec.num_layers as u64).u64(self.spec.token_dim as u64);
        self.visit_params(&mut |p| {
            fp.f64s(p);
        });
        fp.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny_spec() -> BackboneSpec {
        BackboneSpec {
            num_layers: 3,
            token_dim: 8,
            patch_size: 4,
            num_heads: 2,
            input_size: 8,
            mlp_ratio: 2,
        }
    }

    fn random_input(n: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((n, n, 3), || rng.random_range(-2.0..2.0))
    }

    #[test]
    fn patchify_round_trips() {
        let vit = VisionTransformer::random(tiny_spec(), 0).unwrap();
        let x = random_input(8, 1);
        assert_eq!(vit.unpatchify(&vit.patchify(&x)), x);
    }

    #[test]
    fn forward_has_one_row_per_layer_and_is_deterministic() {
        let vit = VisionTransformer::random(tiny_spec(), 0).unwrap();
        let x = random_input(8, 2);
        let a = vit.forward(&x, true).unwrap();
        let b = vit.forward(&x, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cls_by_layer.dim(), (3, 8));
        assert_eq!(a.tokens.as_ref().unwrap().len(), 3);
        assert_eq!(a.tokens.unwrap()[1].row(0), a.cls_by_layer.row(1));
    }

    #[test]
    fn twenty_four_layer_backbone_captures_twenty_four_rows() {
        let spec = BackboneSpec { num_layers: 24, ..tiny_spec() };
        let vit = VisionTransformer::random(spec, 0).unwrap();
        let out = vit.forward(&random_input(8, 3), false).unwrap();
        assert_eq!(out.cls_by_layer.nrows(), 24);
    }

    #[test]
    fn wrong_input_shape_is_error() {
        let vit = VisionTransformer::random(tiny_spec(), 0).unwrap();
        assert!(matches!(vit.forward(&random_input(12, 0), false), Err(Error::Shape(_))));
    }

    #[test]
    fn input_pullback_matches_finite_differences() {
        let vit = VisionTransformer::random(tiny_spec(), 4).unwrap();
        let x = random_input(8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        for layer in 0..3 {
            let (_, grad) = vit
                .input_pullback(&x, layer, &mut |_| Ok(w.clone()))
                .unwrap();
            let objective = |x: &Array3<f64>| {
                let out = vit.forward(x, false).unwrap();
                out.cls_by_layer.row(layer).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            for idx in [(0, 0, 0), (3, 5, 1), (7, 7, 2)] {
                let h = 1e-5;
                let mut xp = x.clone();
                xp[idx] += h;
                let mut xm = x.clone();
                xm[idx] -= h;
                let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
                let err = (fd - grad[idx]).abs() / fd.abs().max(1e-4);
                assert!(err < 1e-4, "layer {layer} {idx:?}: fd {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn cls_pullback_at_final_layer_is_identity() {
        let vit = VisionTransformer::random(tiny_spec(), 4).unwrap();
        let w = vec![0.5; 8];
        let (_, grads) = vit.cls_pullback(&random_input(8, 1), 2, &[&w]).unwrap();
        assert_eq!(grads[0], w);
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = VisionTransformer::random(tiny_spec(), 1).unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.cls_token[0] += 1e-9;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
