use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kappa::retained_pairs;
use crate::error::{Error, Result};

/// Classification metrics of `predicted` against `reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveMetrics {
    pub accuracy: f64,
    /// Mean F1 over classes that occur in either vector.
    pub macro_f1: f64,
    /// `None` for classes absent from the reference.
    pub sensitivity: Vec<Option<f64>>,
    /// `None` when every retained reference label is this class.
    pub specificity: Vec<Option<f64>>,
    /// Rows are reference classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    /// Per reference class, predictions outside the class list (e.g. `???`).
    pub unassigned: Vec<usize>,
    pub pairs: usize,
}

/// Accuracy, macro F1, per-class sensitivity and specificity, and the
/// confusion matrix over `classes`. Pairs with a missing entry are dropped.
pub fn descriptive_metrics<T: Ord>(
    predicted: &[Option<T>],
    reference: &[Option<T>],
    classes: &[T],
) -> Result<DescriptiveMetrics> {
    let (p, r, _) = retained_pairs(predicted, reference)?;
    if p.is_empty() {
        return Err(Error::InsufficientData("no complete prediction/reference pair".into()));
    }
    let index = |v: &T| classes.iter().position(|c| c == v);
    let c = classes.len();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut unassigned = vec![0usize; c];
    for (pv, rv) in p.iter().zip(&r) {
        let row = index(rv).ok_or_else(|| Error::InvalidArgument("reference label outside the class list".into()))?;
        match index(pv) {
            Some(col) => confusion[row][col] += 1,
            None => unassigned[row] += 1,
        }
    }
    let n = p.len();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let mut sensitivity = Vec::with_capacity(c);
    let mut specificity = Vec::with_capacity(c);
    let mut f1 = Vec::new();
    for k in 0..c {
        let tp = confusion[k][k];
        let actual: usize = confusion[k].iter().sum::<usize>() + unassigned[k];
        let predicted_k: usize = (0..c).map(|row| confusion[row][k]).sum();
        let (fn_, fp) = (actual - tp, predicted_k - tp);
        let tn = n - tp - fn_ - fp;
        sensitivity.push((actual > 0).then(|| tp as f64 / actual as f64));
        specificity.push((tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64));
        if actual + predicted_k > 0 {
            f1.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
    }
    Ok(DescriptiveMetrics {
        accuracy: correct as f64 / n as f64,
        macro_f1: f1.iter().sum::<f64>() / f1.len() as f64,
        sensitivity,
        specificity,
        confusion,
        unassigned,
        pairs: n,
    })
}

/// Label proportions for one rater or method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub source: String,
    pub counts: BTreeMap<String, usize>,
    pub proportions: BTreeMap<String, f64>,
    pub labeled: usize,
}

/// Proportion of labeled cells per label; missing entries are ignored.
pub fn class_coverage<T: AsRef<str>>(source: &str, labels: &[Option<T>]) -> Coverage {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels.iter().flatten() {
        *counts.entry(l.as_ref().to_string()).or_default() += 1;
    }
    let labeled: usize = counts.values().sum();
    let proportions = counts
        .iter()
        .map(|(k, &v)| (k.clone(), v as f64 / labeled as f64))
        .collect();
    Coverage {
        source: source.to_string(),
        counts,
        proportions,
        labeled,
    }
}

/// Overlap between two label sources for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub class: String,
    pub both: usize,
    pub count_a: usize,
    pub count_b: usize,
    /// `both / count_a`; `None` when `a` never uses the class.
    pub left: Option<f64>,
    /// `both / count_b`; `None` when `b` never uses the class.
    pub right: Option<f64>,
}

/// Class-wise overlap fractions over cells labeled by both sources.
pub fn overlap_fractions<T: Ord + ToString>(a: &[Option<T>], b: &[Option<T>], classes: &[T]) -> Result<Vec<Overlap>> {
    let (x, y, _) = retained_pairs(a, b)?;
    Ok(classes
        .iter()
        .map(|k| {
            let count_a = x.iter().filter(|v| **v == k).count();
            let count_b = y.iter().filter(|v| **v == k).count();
            let both = x.iter().zip(&y).filter(|(p, q)| **p == k && **q == k).count();
            Overlap {
                class: k.to_string(),
                both,
                count_a,
                count_b,
                left: (count_a > 0).then(|| both as f64 / count_a as f64),
                right: (count_b > 0).then(|| both as f64 / count_b as f64),
            }
        })
        .collect())
}
