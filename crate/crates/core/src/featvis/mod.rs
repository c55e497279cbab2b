//! Image optimization against a trained classifier: class visualization by
//! raw-logit maximization and feature inversion by activation matching, both
//! in a Fourier image parameterization.

mod fourier;

use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fourier::{sigmoid, FourierImageParam, FourierRenderer};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::model::{Backbone, Classifier};
use crate::optim::{Adam, AdamConfig};
use crate::ImageTensor;

pub const DEFAULT_STEPS: usize = 8192;

/// A model whose objectives are differentiable with respect to a display-space
/// image in `[0, 1]`. Input normalization happens inside.
pub trait VisualModel: Sync {
    fn input_size(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn num_layers(&self) -> usize;

    /// Pre-softmax logit of `class` and its gradient with respect to the image.
    fn logit_and_grad(&self, image: &ImageTensor, class: usize) -> Result<(f64, Array3<f64>)>;

    fn activation(&self, image: &ImageTensor, layer: usize) -> Result<Vec<f64>>;

    /// `‖f_layer(image) − target‖²` and its gradient with respect to the image.
    fn inversion_loss_and_grad(&self, image: &ImageTensor, layer: usize, target: &[f64]) -> Result<(f64, Array3<f64>)>;
}

impl<B: Backbone> Classifier<B> {
    fn to_display_grad(&self, mut grad: Array3<f64>) -> Array3<f64> {
        for ((_, _, c), v) in grad.indexed_iter_mut() {
            *v /= self.normalization.std[c];
        }
        grad
    }

    fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
        if index >= limit {
            return Err(Error::OutOfRange { what, index, limit });
        }
        Ok(())
    }
}

impl<B: Backbone> VisualModel for Classifier<B> {
    fn input_size(&self) -> usize {
        Classifier::input_size(self)
    }

    fn num_classes(&self) -> usize {
        Classifier::num_classes(self)
    }

    fn num_layers(&self) -> usize {
        Classifier::num_layers(self)
    }

    fn logit_and_grad(&self, image: &ImageTensor, class: usize) -> Result<(f64, Array3<f64>)> {
        Self::check_index("class", class, self.head.num_classes())?;
        let row = self.head.row(class);
        let last = Classifier::num_layers(self) - 1;
        let (cls, grad) = self
            .backbone
            .input_pullback(&self.normalize(image), last, &mut |_| Ok(row.clone()))?;
        let logit = cls.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>() + self.head.bias[class];
        Ok((logit, self.to_display_grad(grad)))
    }

    fn activation(&self, image: &ImageTensor, layer: usize) -> Result<Vec<f64>> {
        Self::check_index("layer", layer, Classifier::num_layers(self))?;
        let out = self.backbone.forward(&self.normalize(image), false)?;
        Ok(out.cls_by_layer.row(layer).to_vec())
    }

    fn inversion_loss_and_grad(&self, image: &ImageTensor, layer: usize, target: &[f64]) -> Result<(f64, Array3<f64>)> {
        Self::check_index("layer", layer, Classifier::num_layers(self))?;
        let (cls, grad) = self.backbone.input_pullback(&self.normalize(image), layer, &mut |f| {
            if f.len() != target.len() {
                return Err(Error::Shape(format!("target length {} != {}", target.len(), f.len())));
            }
            Ok(f.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect())
        })?;
        let loss = cls.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((loss, self.to_display_grad(grad)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatvisConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Exponent of the `1/f` spectrum scaling.
    pub decay_power: f64,
    pub init_std: f64,
    pub seed: u64,
    /// Maximum random translation in pixels per step; 0 disables it.
    pub jitter: usize,
}

impl Default for FeatvisConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            learning_rate: 0.05,
            decay_power: 1.0,
            init_std: 0.01,
            seed: 0,
            jitter: 0,
        }
    }
}

impl FeatvisConfig {
    pub fn hash(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str("featvis")
            .u64(self.steps as u64)
            .f64s(&[self.learning_rate, self.decay_power, self.init_std])
            .u64(self.seed)
            .u64(self.jitter as u64);
        fp.finish()
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Maximize,
    Minimize,
}

impl Goal {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Goal::Maximize => a > b,
            Goal::Minimize => a < b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub goal: Goal,
    /// Objective evaluated at each executed step.
    pub objective: Vec<f64>,
    /// Best objective up to and including each step.
    pub best_so_far: Vec<f64>,
    pub best_step: usize,
    pub wall_time_s: f64,
    /// The best image seen.
    pub final_image: ImageTensor,
}

impl OptimizationTrace {
    pub fn steps(&self) -> usize {
        self.objective.len()
    }

    pub fn initial(&self) -> f64 {
        self.objective[0]
    }

    pub fn best(&self) -> f64 {
        self.best_so_far[self.best_so_far.len() - 1]
    }
}

/// Record written next to every optimized image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualizationRecord {
    pub kind: String,
    pub target: String,
    pub seed: u64,
    pub steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub best_objective: f64,
    pub config_hash: String,
}

impl VisualizationRecord {
    pub fn new(kind: &str, target: &str, cfg: &FeatvisConfig, trace: &OptimizationTrace) -> Self {
        Self {
            kind: kind.to_string(),
            target: target.to_string(),
            seed: cfg.seed,
            steps: trace.steps(),
            initial_objective: trace.initial(),
            final_objective: trace.objective[trace.steps() - 1],
            best_objective: trace.best(),
            config_hash: cfg.hash(),
        }
    }
}

fn roll(data: &Array3<f64>, dy: isize, dx: isize) -> Array3<f64> {
    let (h, w, c) = data.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, k)| {
        let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
        let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
        data[[sy, sx, k]]
    })
}

/// Runs Adam on Fourier coefficients, starting from `param`.
///
/// `objective` returns a value and its gradient with respect to the rendered
/// image. Aborts with [`Error::OptimizationAborted`] on a non-finite value.
pub fn optimize_image<F>(
    mut param: FourierImageParam,
    cfg: &FeatvisConfig,
    goal: Goal,
    mut objective: F,
) -> Result<OptimizationTrace>
where
    F: FnMut(&ImageTensor) -> Result<(f64, Array3<f64>)>,
{
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("step count must be positive".into()));
    }
    let start = Instant::now();
    let (h, w) = param.dims();
    let renderer = FourierRenderer::new(h, w);
    let mut adam = Adam::new(
        param.num_real_params(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
    );
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a09_e667_f3bc_c908);
    let mut values = param.to_real();
    let mut objective_trace = Vec::with_capacity(cfg.steps);
    let mut best_so_far = Vec::with_capacity(cfg.steps);
    let mut best: Option<(f64, usize, ImageTensor)> = None;
    for step in 0..cfg.steps {
        let image = renderer.render(&param)?;
        let (value, grad_image) = if cfg.jitter > 0 {
            let j = cfg.jitter as i64;
            let dy = jitter_rng.random_range(-j..=j) as isize;
            let dx = jitter_rng.random_range(-j..=j) as isize;
            let shifted = ImageTensor::new(roll(image.data(), dy, dx))?;
            let (v, g) = objective(&shifted)?;
            (v, roll(&g, -dy, -dx))
        } else {
            objective(&image)?
        };
        if !value.is_finite() || grad_image.iter().any(|g| !g.is_finite()) {
            let image = best.as_ref().map(|b| b.2.clone()).unwrap_or_else(|| image.clone());
            objective_trace.push(value);
            best_so_far.push(best.as_ref().map_or(value, |b| b.0));
            return Err(Error::OptimizationAborted {
                step,
                trace: Box::new(OptimizationTrace {
                    goal,
                    objective: objective_trace,
                    best_so_far,
                    best_step: best.map_or(0, |b| b.1),
                    wall_time_s: start.elapsed().as_secs_f64(),
                    final_image: image,
                }),
            });
        }
        objective_trace.push(value);
        if best.as_ref().is_none_or(|b| goal.better(value, b.0)) {
            best = Some((value, step, image.clone()));
        }
        best_so_far.push(best.as_ref().expect("set above").0);
        let mut grad = renderer.pullback(&param, &image, &grad_image)?;
        if goal == Goal::Maximize {
            grad.iter_mut().for_each(|g| *g = -*g);
        }
        adam.step(&mut values, &grad);
        param.set_real(&values)?;
    }
    let (_, best_step, final_image) = best.expect("at least one step");
    Ok(OptimizationTrace {
        goal,
        objective: objective_trace,
        best_so_far,
        best_step,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_image,
    })
}

fn initial_param(size: usize, cfg: &FeatvisConfig) -> Result<FourierImageParam> {
    FourierImageParam::random(size, size, cfg.decay_power, cfg.init_std, cfg.seed)
}

/// Maximizes the raw pre-softmax logit of `class`.
pub fn class_visualization<M: VisualModel + ?Sized>(
    model: &M,
    class: usize,
    cfg: &FeatvisConfig,
) -> Result<(ImageTensor, OptimizationTrace)> {
    if class >= model.num_classes() {
        return Err(Error::OutOfRange {
            what: "class",
            index: class,
            limit: model.num_classes(),
        });
    }
    let param = initial_param(model.input_size(), cfg)?;
    let trace = optimize_image(param, cfg, Goal::Maximize, |img| model.logit_and_grad(img, class))?;
    Ok((trace.final_image.clone(), trace))
}

/// Minimizes `‖f_layer(img) − target‖²` and returns the best-loss image.
pub fn feature_inversion<M: VisualModel + ?Sized>(
    model: &M,
    layer: usize,
    target: &[f64],
    cfg: &FeatvisConfig,
) -> Result<(ImageTensor, OptimizationTrace)> {
    if layer >= model.num_layers() {
        return Err(Error::OutOfRange {
            what: "layer",
            index: layer,
            limit: model.num_layers(),
        });
    }
    if let Some(v) = target.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("inversion target contains {v}")));
    }
    let param = initial_param(model.input_size(), cfg)?;
    let trace = optimize_image(param, cfg, Goal::Minimize, |img| {
        model.inversion_loss_and_grad(img, layer, target)
    })?;
    Ok((trace.final_image.clone(), trace))
}

/// Seed used for target `index` of a batch run.
pub fn target_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// One class visualization per class, in parallel, with seeds from [`target_seed`].
pub fn visualize_all_classes<M: VisualModel + ?Sized>(
    model: &M,
    cfg: &FeatvisConfig,
) -> Result<Vec<(ImageTensor, OptimizationTrace)>> {
    (0..model.num_classes())
        .into_par_iter()
        .map(|c| class_visualization(model, c, &cfg.with_seed(target_seed(cfg.seed, c))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassMap, Normalization};
    use crate::model::{BackboneSpec, LinearHead, VisionTransformer};

    /// `logit_c = Σ_k w[c][k] · mean(channel k)`; activation is the channel mean.
    struct LinearOracle {
        size: usize,
        weights: Vec<[f64; 3]>,
    }

    impl VisualModel for LinearOracle {
        fn input_size(&self) -> usize {
            self.size
        }
        fn num_classes(&self) -> usize {
            self.weights.len()
        }
        fn num_layers(&self) -> usize {
            1
        }
        fn logit_and_grad(&self, image: &ImageTensor, class: usize) -> Result<(f64, Array3<f64>)> {
            let w = self.weights[class];
            let means = image.channel_means();
            let n = (self.size * self.size) as f64;
            let grad = Array3::from_shape_fn((self.size, self.size, 3), |(_, _, c)| w[c] / n);
            Ok(((0..3).map(|c| w[c] * means[c]).sum(), grad))
        }
        fn activation(&self, image: &ImageTensor, _layer: usize) -> Result<Vec<f64>> {
            Ok(image.channel_means().to_vec())
        }
        fn inversion_loss_and_grad(&self, image: &ImageTensor, _layer: usize, target: &[f64]) -> Result<(f64, Array3<f64>)> {
            let m = image.channel_means();
            let n = (self.size * self.size) as f64;
            let loss = (0..3).map(|c| (m[c] - target[c]).powi(2)).sum();
            let grad = Array3::from_shape_fn((self.size, self.size, 3), |(_, _, c)| 2.0 * (m[c] - target[c]) / n);
            Ok((loss, grad))
        }
    }

    fn quick(steps: usize) -> FeatvisConfig {
        FeatvisConfig {
            steps,
            ..Default::default()
        }
    }

    #[test]
    fn linear_oracle_drives_channels_to_extremes() {
        let model = LinearOracle {
            size: 16,
            weights: vec![[1.0, -1.0, 0.5]],
        };
        // Random initial spectra leave a few pixels stuck on the wrong side
        // of the squash, where the gradient vanishes, so start from gray.
        let cfg = FeatvisConfig {
            init_std: 0.0,
            ..quick(DEFAULT_STEPS)
        };
        let (img, trace) = class_visualization(&model, 0, &cfg).unwrap();
        let m = img.channel_means();
        assert!(m[0] > 0.95 && m[1] < 0.05 && m[2] > 0.95, "{m:?}");
        assert!(trace.best() > trace.initial());
    }

    #[test]
    fn best_so_far_is_monotone() {
        let model = LinearOracle {
            size: 8,
            weights: vec![[0.3, 0.2, -0.7]],
        };
        let (_, trace) = class_visualization(&model, 0, &quick(50)).unwrap();
        assert_eq!(trace.steps(), 50);
        assert!(trace.best_so_far.windows(2).all(|w| w[1] >= w[0]));
        let (_, inv) = feature_inversion(&model, 0, &[0.2, 0.8, 0.5], &quick(50)).unwrap();
        assert!(inv.best_so_far.windows(2).all(|w| w[1] <= w[0]));
        assert!(inv.best() < inv.initial());
    }

    #[test]
    fn class_out_of_range() {
        let model = LinearOracle {
            size: 8,
            weights: vec![[1.0; 3]],
        };
        assert!(matches!(
            class_visualization(&model, 1, &quick(5)),
            Err(Error::OutOfRange { .. })
        ));
        assert!(feature_inversion(&model, 3, &[0.0; 3], &quick(5)).is_err());
        assert!(feature_inversion(&model, 0, &[f64::NAN, 0.0, 0.0], &quick(5)).is_err());
    }

    #[test]
    fn non_finite_objective_aborts_with_trace() {
        let param = FourierImageParam::zeros(4, 4, 1.0).unwrap();
        let mut calls = 0;
        let err = optimize_image(param, &quick(10), Goal::Maximize, |img| {
            calls += 1;
            let v = if calls == 3 { f64::NAN } else { img.data().sum() };
            Ok((v, Array3::ones((4, 4, 3))))
        })
        .unwrap_err();
        match err {
            Error::OptimizationAborted { step, trace } => {
                assert_eq!(step, 2);
                assert_eq!(trace.steps(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn tiny_classifier() -> Classifier {
        let spec = BackboneSpec {
            num_layers: 3,
            token_dim: 16,
            patch_size: 4,
            num_heads: 2,
            input_size: 8,
            mlp_ratio: 2,
        };
        Classifier::new(
            VisionTransformer::random(spec, 1).unwrap(),
            LinearHead::random(3, 16, 2),
            Normalization::imagenet(),
            ClassMap::from_codes(&["A", "B", "C"]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn classifier_display_gradient_matches_finite_differences() {
        let model = tiny_classifier();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ImageTensor::new(Array3::from_shape_simple_fn((8, 8, 3), || rng.random_range(0.2..0.8))).unwrap();
        let target: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin()).collect();
        let (_, g_logit) = model.logit_and_grad(&img, 1).unwrap();
        let (_, g_inv) = model.inversion_loss_and_grad(&img, 1, &target).unwrap();
        for &(y, x, c) in &[(0, 0, 0), (3, 5, 1), (7, 2, 2)] {
            let eps = 1e-5;
            let mut plus = img.data().clone();
            plus[[y, x, c]] += eps;
            let mut minus = img.data().clone();
            minus[[y, x, c]] -= eps;
            let (p, m) = (ImageTensor::new(plus).unwrap(), ImageTensor::new(minus).unwrap());
            let fd = (model.logit_and_grad(&p, 1).unwrap().0 - model.logit_and_grad(&m, 1).unwrap().0) / (2.0 * eps);
            assert!((fd - g_logit[[y, x, c]]).abs() < 1e-6 * (1.0 + fd.abs()));
            let fd = (model.inversion_loss_and_grad(&p, 1, &target).unwrap().0
                - model.inversion_loss_and_grad(&m, 1, &target).unwrap().0)
                / (2.0 * eps);
            assert!((fd - g_inv[[y, x, c]]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        let logits = model.forward_image(&img).unwrap().logits;
        assert!((model.logit_and_grad(&img, 1).unwrap().0 - logits[1]).abs() < 1e-12);
    }

    #[test]
    fn inverting_the_initial_image_is_a_fixed_point() {
        let model = tiny_classifier();
        let cfg = quick(20);
        let start = FourierRenderer::new(8, 8).render(&initial_param(8, &cfg).unwrap()).unwrap();
        let target = model.activation(&start, 2).unwrap();
        let (img, trace) = feature_inversion(&model, 2, &target, &cfg).unwrap();
        assert_eq!(trace.initial(), 0.0);
        assert!(trace.objective.iter().all(|&v| v == 0.0));
        assert_eq!(img, start);
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let model = tiny_classifier();
        let cfg = FeatvisConfig { jitter: 1, ..quick(15) };
        let a = class_visualization(&model, 2, &cfg).unwrap();
        let b = class_visualization(&model, 2, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.objective, b.1.objective);
        let c = class_visualization(&model, 2, &cfg.with_seed(9)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn roll_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Array3::from_shape_simple_fn((5, 4, 3), || rng.random::<f64>());
        assert_eq!(roll(&roll(&a, 2, -3), -2, 3), a);
    }

    #[test]
    fn batch_uses_distinct_seeds_and_sidecar_records_them() {
        let model = tiny_classifier();
        let cfg = quick(5);
        let all = visualize_all_classes(&model, &cfg).unwrap();
        assert_eq!(all.len(), 3);
        let rec = VisualizationRecord::new("class", "B", &cfg.with_seed(target_seed(0, 1)), &all[1].1);
        assert_eq!(rec.seed, 1);
        assert_eq!(rec.steps, 5);
        assert_eq!(rec.best_objective, all[1].1.best());
    }
}
