use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotationMatrix, UncertainMode};
use crate::error::{Error, Result};

/// A chance-corrected agreement value. `degenerate` marks the case where the
/// chance term leaves no room for disagreement (one category in use) and the
/// value is reported as 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub value: f64,
    pub degenerate: bool,
    /// Items (or pairs) that entered the statistic.
    pub used: usize,
    /// Items (or pairs) dropped for missing or excluded ratings.
    pub dropped: usize,
}

/// Fleiss' κ over items rated by every rater.
pub fn fleiss_kappa(matrix: &AnnotationMatrix, mode: UncertainMode) -> Result<Agreement> {
    let coded = matrix.coded(mode);
    fleiss_coded(&coded.rows, coded.num_categories, coded.excluded_items)
}

pub(crate) fn fleiss_coded(rows: &[Vec<Option<usize>>], categories: usize, excluded: usize) -> Result<Agreement> {
    let raters = rows.first().map_or(0, Vec::len);
    if raters < 2 {
        return Err(Error::InsufficientData(format!("{raters} raters; need at least 2")));
    }
    let complete: Vec<Vec<usize>> = rows
        .iter()
        .filter(|r| r.iter().all(Option::is_some))
        .map(|r| r.iter().map(|v| v.expect("complete row")).collect())
        .collect();
    let dropped = excluded + rows.len() - complete.len();
    if complete.is_empty() {
        return Err(Error::InsufficientData("no item is rated by every rater".into()));
    }
    let (n_items, n) = (complete.len(), raters as f64);
    let mut totals = vec![0usize; categories];
    let mut p_bar = 0.0;
    for row in &complete {
        let mut counts = vec![0usize; categories];
        for &c in row {
            counts[c] += 1;
            totals[c] += 1;
        }
        let sq: usize = counts.iter().map(|k| k * k).sum();
        p_bar += (sq as f64 - n) / (n * (n - 1.0));
    }
    p_bar /= n_items as f64;
    if totals.iter().filter(|&&t| t > 0).count() == 1 {
        return Ok(Agreement {
            value: 1.0,
            degenerate: true,
            used: n_items,
            dropped,
        });
    }
    let denom = n_items as f64 * n;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / denom).powi(2)).sum();
    Ok(Agreement {
        value: (p_bar - p_e) / (1.0 - p_e),
        degenerate: false,
        used: n_items,
        dropped,
    })
}

/// Cohen's κ over pairs where both labels are present. Exactly symmetric in
/// its arguments.
pub fn cohens_kappa<T: Ord>(a: &[Option<T>], b: &[Option<T>]) -> Result<Agreement> {
    let (x, y, dropped) = retained_pairs(a, b)?;
    if x.is_empty() {
        return Err(Error::InsufficientData("no pair has both labels".into()));
    }
    let k = kappa_of(&x, &y);
    Ok(Agreement {
        value: k.unwrap_or(1.0),
        degenerate: k.is_none(),
        used: x.len(),
        dropped,
    })
}

/// Fraction of retained pairs with equal labels.
pub fn percent_agreement<T: Ord>(a: &[Option<T>], b: &[Option<T>]) -> Result<f64> {
    let (x, y, _) = retained_pairs(a, b)?;
    if x.is_empty() {
        return Err(Error::InsufficientData("no pair has both labels".into()));
    }
    Ok(agreement_rate(&x, &y))
}

pub(crate) fn retained_pairs<'a, T>(a: &'a [Option<T>], b: &'a [Option<T>]) -> Result<(Vec<&'a T>, Vec<&'a T>, usize)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("label vectors of length {} and {}", a.len(), b.len())));
    }
    let (x, y): (Vec<&T>, Vec<&T>) = a
        .iter()
        .zip(b)
        .filter_map(|(p, q)| Some((p.as_ref()?, q.as_ref()?)))
        .unzip();
    let dropped = a.len() - x.len();
    Ok((x, y, dropped))
}

pub(crate) fn agreement_rate<T: Ord>(x: &[&T], y: &[&T]) -> f64 {
    x.iter().zip(y).filter(|(p, q)| p == q).count() as f64 / x.len() as f64
}

/// κ from integer counts; `None` when the chance agreement is 1.
pub(crate) fn kappa_of<T: Ord>(x: &[&T], y: &[&T]) -> Option<f64> {
    let n = x.len() as u128;
    let mut marginals: BTreeMap<&T, (u128, u128)> = BTreeMap::new();
    for (p, q) in x.iter().zip(y) {
        marginals.entry(p).or_default().0 += 1;
        marginals.entry(q).or_default().1 += 1;
    }
    let agree = x.iter().zip(y).filter(|(p, q)| p == q).count() as u128;
    let chance: u128 = marginals.values().map(|(p, q)| p * q).sum();
    if chance == n * n {
        return None;
    }
    Some(((agree * n) as f64 - chance as f64) / (n * n - chance) as f64)
}

/// Krippendorff's α for nominal data. Items with fewer than two ratings
/// contribute nothing.
pub fn krippendorff_alpha(matrix: &AnnotationMatrix, mode: UncertainMode) -> Result<Agreement> {
    let coded = matrix.coded(mode);
    alpha_coded(&coded.rows, coded.num_categories, coded.excluded_items)
}

pub(crate) fn alpha_coded(rows: &[Vec<Option<usize>>], categories: usize, excluded: usize) -> Result<Agreement> {
    let mut coincidence = vec![vec![0.0; categories]; categories];
    let mut used = 0;
    for row in rows {
        let mut counts = vec![0usize; categories];
        let mut m = 0usize;
        for c in row.iter().flatten() {
            counts[*c] += 1;
            m += 1;
        }
        if m < 2 {
            continue;
        }
        used += 1;
        for c in 0..categories {
            if counts[c] == 0 {
                continue;
            }
            for k in 0..categories {
                let pairs = counts[c] * (counts[k] - usize::from(c == k));
                coincidence[c][k] += pairs as f64 / (m - 1) as f64;
            }
        }
    }
    let dropped = excluded + rows.len() - used;
    if used == 0 {
        return Err(Error::InsufficientData("no item has two or more ratings".into()));
    }
    let marginals: Vec<f64> = coincidence.iter().map(|r| r.iter().sum()).collect();
    let total: f64 = marginals.iter().sum();
    let (mut observed, mut expected) = (0.0, 0.0);
    for c in 0..categories {
        for k in 0..categories {
            if c != k {
                observed += coincidence[c][k];
                expected += marginals[c] * marginals[k];
            }
        }
    }
    if expected == 0.0 {
        return Ok(Agreement {
            value: 1.0,
            degenerate: true,
            used,
            dropped,
        });
    }
    Ok(Agreement {
        value: 1.0 - (total - 1.0) * observed / expected,
        degenerate: false,
        used,
        dropped,
    })
}
