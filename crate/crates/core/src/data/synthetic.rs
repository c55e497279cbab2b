//! Procedural texture datasets.
//!
//! Each class is an oriented sinusoidal grating with its own orientation,
//! spatial frequency and tint, rendered with per-patch phase, orientation and
//! frequency jitter plus pixel noise. Patches are spread over "slides" (groups)
//! that each carry a small brightness offset, so grouped folds matter.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassMap, LabeledPatch};
use crate::error::Result;
use crate::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureClass {
    pub code: String,
    pub orientation_deg: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    /// Color at the grating's bright phase.
    pub bright: [f64; 3],
    /// Color at the grating's dark phase.
    pub dark: [f64; 3],
}

impl TextureClass {
    pub fn new(code: &str, orientation_deg: f64, frequency: f64, bright: [f64; 3], dark: [f64; 3]) -> Self {
        Self {
            code: code.to_string(),
            orientation_deg,
            frequency,
            bright,
            dark,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub size: usize,
    pub per_class: usize,
    pub slides: usize,
    pub orientation_jitter_deg: f64,
    pub frequency_jitter: f64,
    pub noise: f64,
    pub slide_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 32,
            per_class: 40,
            slides: 8,
            orientation_jitter_deg: 6.0,
            frequency_jitter: 0.08,
            noise: 0.05,
            slide_shift: 0.03,
            seed: 0,
        }
    }
}

/// Named texture sets used for demos and the acceptance suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureSet {
    /// Five distinct textures.
    Five,
    /// Three well-separated textures.
    Coarse,
    /// Six textures forming three confusable pairs derived from `Coarse`.
    Fine,
}

impl TextureSet {
    pub fn classes(self) -> Vec<TextureClass> {
        match self {
            TextureSet::Five => [
                ("STRIPE", 0.0, 0.09),
                ("DIAG", 45.0, 0.16),
                ("COLUMN", 90.0, 0.12),
                ("ANTI", 135.0, 0.24),
                ("FINE", 20.0, 0.32),
            ]
            .into_iter()
            // one shared palette, so only orientation and frequency tell classes apart
            .map(|(code, o, f)| TextureClass::new(code, o, f, [0.85, 0.70, 0.80], [0.45, 0.30, 0.50]))
            .collect(),
            TextureSet::Coarse => coarse_base()
                .into_iter()
                .map(|(code, o, f, b, d)| TextureClass::new(code, o, f, b, d))
                .collect(),
            TextureSet::Fine => coarse_base()
                .into_iter()
                .flat_map(|(code, o, f, b, d)| {
                    let shade = |c: [f64; 3], s: f64| c.map(|v| (v + s).clamp(0.0, 1.0));
                    [
                        TextureClass::new(&format!("{code}1"), o - 4.0, f * 0.97, shade(b, 0.015), d),
                        TextureClass::new(&format!("{code}2"), o + 4.0, f * 1.03, shade(b, -0.015), d),
                    ]
                })
                .collect(),
        }
    }
}

fn coarse_base() -> Vec<(&'static str, f64, f64, [f64; 3], [f64; 3])> {
    vec![
        ("HORZ", 0.0, 0.10, [0.95, 0.70, 0.75], [0.45, 0.20, 0.40]),
        ("OBLQ", 60.0, 0.20, [0.80, 0.75, 0.95], [0.30, 0.35, 0.65]),
        ("VERT", 120.0, 0.30, [0.90, 0.90, 0.75], [0.55, 0.45, 0.30]),
    ]
}

/// Renders `cfg.per_class` patches for each class.
pub fn generate(classes: &[TextureClass], cfg: &SyntheticConfig) -> Result<(ClassMap, Vec<LabeledPatch>)> {
    let class_map = ClassMap::new(classes.iter().map(|c| (c.code.clone(), c.code.clone())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let slides = cfg.slides.max(1);
    let slide_offsets: Vec<f64> = (0..slides)
        .map(|_| rng.random_range(-cfg.slide_shift..=cfg.slide_shift))
        .collect();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("valid sigma");
    let mut patches = Vec::with_capacity(classes.len() * cfg.per_class);
    for i in 0..cfg.per_class {
        for (class_id, class) in classes.iter().enumerate() {
            let slide = (i + class_id) % slides;
            let image = render_texture(class, cfg, slide_offsets[slide], &noise, &mut rng)?;
            patches.push(LabeledPatch {
                id: format!("{}/slide{slide}__{i:04}", class.code),
                image,
                class_id,
                group_id: format!("slide{slide}"),
            });
        }
    }
    Ok((class_map, patches))
}

fn render_texture(
    class: &TextureClass,
    cfg: &SyntheticConfig,
    offset: f64,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    let jitter = if cfg.orientation_jitter_deg > 0.0 {
        rng.random_range(-cfg.orientation_jitter_deg..=cfg.orientation_jitter_deg)
    } else {
        0.0
    };
    let theta = (class.orientation_deg + jitter).to_radians();
    let freq = class.frequency
        * if cfg.frequency_jitter > 0.0 {
            rng.random_range(1.0 - cfg.frequency_jitter..=1.0 + cfg.frequency_jitter)
        } else {
            1.0
        };
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let n = cfg.size;
    let mut data = Array3::zeros((n, n, 3));
    for y in 0..n {
        for x in 0..n {
            let t = 0.5
                + 0.5 * (std::f64::consts::TAU * freq * (x as f64 * dir_x + y as f64 * dir_y) + phase).sin();
            for c in 0..3 {
                let v = class.dark[c] + (class.bright[c] - class.dark[c]) * t + offset + noise.sample(rng);
                data[[y, x, c]] = v;
            }
        }
    }
    ImageTensor::from_clamped(data)
}
