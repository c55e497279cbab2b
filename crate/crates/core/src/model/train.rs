use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{argmax, softmax};
use super::{Backbone, LinearHead};
use crate::data::{augment, AugmentConfig, LabeledPatch, Normalization};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Applied to training images only, re-drawn every epoch.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            max_epochs: 50,
            patience: 20,
            batch_size: 32,
            seed: 0,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Feature rows with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean cross-entropy of `head` on `set`, and its accuracy.
pub fn cross_entropy(head: &LinearHead, set: &FeatureSet) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in set.features.rows().into_iter().zip(&set.labels) {
        let logits = head.logits(row.as_slice().expect("contiguous rows"));
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - logits[label];
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    let n = set.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

struct HeadTrainer {
    head: LinearHead,
    opt: Adam,
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl HeadTrainer {
    fn epoch(&mut self, train: &FeatureSet) -> Result<f64> {
        let c = self.head.num_classes();
        let d = self.head.dim();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for batch in order.chunks(self.batch_size.max(1)) {
            let mut gw = Array2::<f64>::zeros((c, d));
            let mut gb = Array1::<f64>::zeros(c);
            let mut loss = 0.0;
            for &i in batch {
                let f = train.features.row(i);
                let logits = self.head.logits(f.as_slice().expect("contiguous rows"));
                let probs = softmax(&logits);
                let label = train.labels[i];
                loss -= probs[label].max(f64::MIN_POSITIVE).ln();
                for k in 0..c {
                    let g = probs[k] - if k == label { 1.0 } else { 0.0 };
                    gb[k] += g;
                    gw.row_mut(k).scaled_add(g, &f);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {loss} (lr too high or non-finite features?)"
                )));
            }
            total += loss;
            let mut params: Vec<f64> = self.head.weight.iter().chain(self.head.bias.iter()).copied().collect();
            let grad: Vec<f64> = gw.iter().chain(gb.iter()).map(|g| g * scale).collect();
            self.opt.step(&mut params, &grad);
            let (w, b) = params.split_at(c * d);
            self.head.weight = Array2::from_shape_vec((c, d), w.to_vec()).expect("shape");
            self.head.bias = Array1::from(b.to_vec());
        }
        Ok(total / train.len() as f64)
    }
}

/// Trains a linear head on precomputed features with cross-entropy and AdamW,
/// keeping the checkpoint with the lowest validation loss.
pub fn train_head_on_features(
    train: &FeatureSet,
    val: &FeatureSet,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(LinearHead, TrainingLog)> {
    train_head_with(num_classes, cfg, val, |_| Ok(train.clone()), train)
}

fn train_head_with(
    num_classes: usize,
    cfg: &TrainConfig,
    val: &FeatureSet,
    mut train_epoch_features: impl FnMut(usize) -> Result<FeatureSet>,
    probe: &FeatureSet,
) -> Result<(LinearHead, TrainingLog)> {
    if probe.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::InsufficientData("empty validation set".into()));
    }
    if let Some(&bad) = probe.labels.iter().chain(&val.labels).find(|&&l| l >= num_classes) {
        return Err(Error::OutOfRange {
            what: "label",
            index: bad,
            limit: num_classes,
        });
    }
    if probe.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    let d = probe.features.ncols();
    let mut trainer = HeadTrainer {
        head: LinearHead::zeros(num_classes, d),
        opt: Adam::new(
            num_classes * d + num_classes,
            AdamConfig {
                learning_rate: cfg.learning_rate,
                weight_decay: cfg.weight_decay,
                ..Default::default()
            },
        ),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
        batch_size: cfg.batch_size,
    };
    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = trainer.head.clone();
    for epoch in 0..cfg.max_epochs {
        let train = train_epoch_features(epoch)?;
        let train_loss = trainer.epoch(&train)?;
        let (val_loss, val_accuracy) = cross_entropy(&trainer.head, val);
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = trainer.head.clone();
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    Ok((best, log))
}

/// Final-layer cls features of `patches` (normalized, not augmented).
pub fn extract_features<B: Backbone>(
    backbone: &B,
    normalization: &Normalization,
    patches: &[LabeledPatch],
) -> Result<FeatureSet> {
    let d = backbone.spec().token_dim;
    let rows: Vec<Vec<f64>> = patches
        .par_iter()
        .map(|p| Ok(backbone.forward(&normalization.apply(&p.image), false)?.final_cls()))
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    FeatureSet::new(
        Array2::from_shape_vec((patches.len(), d), flat).expect("shape"),
        patches.iter().map(|p| p.class_id).collect(),
    )
}

/// Trains a linear head on top of a frozen backbone. The backbone is only
/// borrowed immutably.
pub fn train_linear_head<B: Backbone>(
    backbone: &B,
    normalization: &Normalization,
    train: &[LabeledPatch],
    val: &[LabeledPatch],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(LinearHead, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let clean = extract_features(backbone, normalization, train)?;
    let val_set = extract_features(backbone, normalization, val)?;
    match &cfg.augment {
        None => train_head_on_features(&clean, &val_set, num_classes, cfg),
        Some(aug) => {
            let aug = aug.clone();
            train_head_with(
                num_classes,
                cfg,
                &val_set,
                |epoch| {
                    let augmented: Vec<LabeledPatch> = train
                        .par_iter()
                        .enumerate()
                        .map(|(i, p)| {
                            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((epoch as u64) << 32) ^ i as u64);
                            Ok(LabeledPatch {
                                image: augment(&p.image, &aug, &mut rng)?,
                                ..p.clone()
                            })
                        })
                        .collect::<Result<_>>()?;
                    extract_features(backbone, normalization, &augmented)
                },
                &clean,
            )
        }
    }
}
