use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{argmax, softmax};
use super::{Backbone, Classifier};
use crate::data::LabeledPatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Macro one-vs-rest AUROC over classes present in the ground truth.
    pub auroc: f64,
    pub f1_macro: f64,
    pub accuracy: f64,
    /// Rows are reference classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Runs `model` on every patch and scores its softmax outputs.
pub fn evaluate<B: Backbone>(model: &Classifier<B>, patches: &[LabeledPatch]) -> Result<EvalReport> {
    let scores: Vec<Vec<f64>> = patches
        .par_iter()
        .map(|p| Ok(softmax(&model.forward_image(&p.image)?.logits)))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = patches.iter().map(|p| p.class_id).collect();
    evaluate_scores(&scores, &labels, model.num_classes())
}

/// Scores per-sample class scores (one row per sample) against labels.
pub fn evaluate_scores(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let mut present = vec![false; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::OutOfRange {
                what: "label",
                index: l,
                limit: num_classes,
            });
        }
        present[l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::InsufficientData("need at least two classes in the ground truth".into()));
    }
    let predictions: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in labels.iter().zip(&predictions) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / labels.len() as f64;

    let mut warnings = Vec::new();
    let mut aucs = Vec::new();
    for c in 0..num_classes {
        if !present[c] {
            let msg = format!("class {c} absent from ground truth; excluded from macro AUROC");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let class_scores: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        aucs.push(binary_auroc(&class_scores, &positives));
    }
    let auroc = aucs.iter().sum::<f64>() / aucs.len() as f64;

    let mut f1s = Vec::new();
    for c in 0..num_classes {
        let tp = confusion[c][c] as f64;
        let support = confusion[c].iter().sum::<usize>() as f64;
        let predicted = (0..num_classes).map(|r| confusion[r][c]).sum::<usize>() as f64;
        if support == 0.0 && predicted == 0.0 {
            continue;
        }
        f1s.push(if tp == 0.0 { 0.0 } else { 2.0 * tp / (support + predicted) });
    }
    let f1_macro = f1s.iter().sum::<f64>() / f1s.len() as f64;
    Ok(EvalReport {
        auroc,
        f1_macro,
        accuracy,
        confusion,
        warnings,
    })
}

/// Area under the ROC curve via the rank-sum statistic with tied ranks averaged.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classifier() {
        let labels = vec![0, 1, 2, 1, 0];
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..3).map(|c| if c == l { 0.9 } else { 0.05 }).collect())
            .collect();
        let r = evaluate_scores(&scores, &labels, 3).unwrap();
        assert_eq!(r.auroc, 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1_macro, 1.0);
        assert_eq!(r.confusion[1], vec![0, 2, 0]);
    }

    #[test]
    fn constant_predictor_is_at_chance() {
        let labels = vec![0, 1, 0, 1, 0, 1];
        let scores = vec![vec![0.5, 0.5]; 6];
        let r = evaluate_scores(&scores, &labels, 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.auroc, 0.5);
    }

    #[test]
    fn absent_class_is_excluded_with_warning() {
        let labels = vec![0, 1, 0, 1];
        let scores = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.7, 0.2, 0.1], vec![0.2, 0.7, 0.1]];
        let r = evaluate_scores(&scores, &labels, 3).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.auroc, 1.0);
        let rows: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![2, 2, 0]);
    }

    #[test]
    fn single_class_is_error() {
        assert!(evaluate_scores(&[vec![1.0, 0.0]], &[0], 2).is_err());
    }

    #[test]
    fn auroc_matches_pair_count() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
        let pos = [false, true, false, true, false];
        // positive/negative pairs ordered correctly, ties count one half
        let mut wins = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if pos[i] && !pos[j] {
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((binary_auroc(&scores, &pos) - wins / 6.0).abs() < 1e-12);
    }
}
