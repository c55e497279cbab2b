use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassMap, LabeledPatch};
use crate::error::{Error, Result};

/// Fold index per patch, aligned with the patch slice it was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldReport {
    pub warnings: Vec<String>,
    /// Largest absolute gap between a fold's class proportion and the global one.
    pub max_proportion_gap: f64,
}

impl FoldAssignment {
    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    /// Indices in `fold` and indices outside it.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.folds.len()).partition(|&i| self.folds[i] == fold)
    }

    /// Largest deviation of any per-fold class proportion from the global one.
    pub fn max_proportion_gap(&self, patches: &[LabeledPatch], num_classes: usize) -> f64 {
        let total = patches.len() as f64;
        let mut global = vec![0.0; num_classes];
        for p in patches {
            global[p.class_id] += 1.0 / total;
        }
        let mut gap: f64 = 0.0;
        for fold in 0..self.k {
            let members = self.fold_members(fold);
            if members.is_empty() {
                continue;
            }
            let mut local = vec![0.0; num_classes];
            for &i in &members {
                local[patches[i].class_id] += 1.0 / members.len() as f64;
            }
            for c in 0..num_classes {
                gap = gap.max((local[c] - global[c]).abs());
            }
        }
        gap
    }

    /// Writes `patch_id,group_id,class_code,fold`.
    pub fn write_csv<W: Write>(&self, out: W, patches: &[LabeledPatch], class_map: &ClassMap) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patch_id", "group_id", "class_code", "fold"])?;
        for (p, fold) in patches.iter().zip(&self.folds) {
            w.write_record([
                p.id.as_str(),
                p.group_id.as_str(),
                class_map.code(p.class_id).unwrap_or("?"),
                &fold.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<fold csv>", e))?;
        Ok(())
    }
}

/// Greedy stratified grouped k-fold split.
///
/// Groups are visited in order of decreasing spread of their class counts
/// (after a seeded shuffle) and each is placed in the fold that keeps the
/// per-class fold proportions most even, ties going to the smaller fold.
pub fn stratified_group_kfold(
    patches: &[LabeledPatch],
    num_classes: usize,
    k: usize,
    seed: u64,
) -> Result<(FoldAssignment, FoldReport)> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut group_index: BTreeMap<&str, usize> = BTreeMap::new();
    for p in patches {
        if p.class_id >= num_classes {
            return Err(Error::OutOfRange {
                what: "class_id",
                index: p.class_id,
                limit: num_classes,
            });
        }
        let next = group_index.len();
        group_index.entry(p.group_id.as_str()).or_insert(next);
    }
    let num_groups = group_index.len();
    if num_groups < k {
        return Err(Error::InsufficientData(format!(
            "{num_groups} distinct groups for {k} folds"
        )));
    }

    let mut group_counts = vec![vec![0.0f64; num_classes]; num_groups];
    let mut class_totals = vec![0.0f64; num_classes];
    let patch_group: Vec<usize> = patches.iter().map(|p| group_index[p.group_id.as_str()]).collect();
    for (p, &g) in patches.iter().zip(&patch_group) {
        group_counts[g][p.class_id] += 1.0;
        class_totals[p.class_id] += 1.0;
    }

    let mut report = FoldReport::default();
    for c in 0..num_classes {
        let groups_with_class = group_counts.iter().filter(|g| g[c] > 0.0).count();
        if groups_with_class == 1 {
            let msg = format!("class {c} occurs in a single group; stratification degraded");
            warn!("{msg}");
            report.warnings.push(msg);
        }
    }

    let mut order: Vec<usize> = (0..num_groups).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let spread: Vec<f64> = group_counts.iter().map(|g| population_std(g)).collect();
    // stable sort keeps the shuffled order among equal spreads
    order.sort_by(|&a, &b| spread[b].total_cmp(&spread[a]));

    let mut fold_counts = vec![vec![0.0f64; num_classes]; k];
    let mut group_fold = vec![0usize; num_groups];
    let used_classes: Vec<usize> = (0..num_classes).filter(|&c| class_totals[c] > 0.0).collect();
    for &g in &order {
        let mut best = 0;
        let mut best_eval = f64::INFINITY;
        let mut best_size = f64::INFINITY;
        for fold in 0..k {
            let eval = used_classes
                .iter()
                .map(|&c| {
                    let props: Vec<f64> = (0..k)
                        .map(|f| {
                            let extra = if f == fold { group_counts[g][c] } else { 0.0 };
                            (fold_counts[f][c] + extra) / class_totals[c]
                        })
                        .collect();
                    population_std(&props)
                })
                .sum::<f64>()
                / used_classes.len().max(1) as f64;
            let size: f64 = fold_counts[fold].iter().sum();
            let close = (eval - best_eval).abs() <= 1e-8 + 1e-5 * best_eval.abs();
            if eval < best_eval || (close && size < best_size) {
                best = fold;
                best_eval = eval;
                best_size = size;
            }
        }
        for c in 0..num_classes {
            fold_counts[best][c] += group_counts[g][c];
        }
        group_fold[g] = best;
    }

    let assignment = FoldAssignment {
        k,
        folds: patch_group.iter().map(|&g| group_fold[g]).collect(),
    };
    report.max_proportion_gap = assignment.max_proportion_gap(patches, num_classes);
    Ok((assignment, report))
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
