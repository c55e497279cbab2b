use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kappa::{agreement_rate, kappa_of, retained_pairs};
use crate::error::{Error, Result};

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 300;

/// Statistic evaluated on each resample of paired labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatistic {
    CohensKappa,
    PercentAgreement,
}

impl PairStatistic {
    /// `None` when the statistic is undefined on this sample.
    pub fn evaluate<T: Ord>(self, x: &[&T], y: &[&T]) -> Option<f64> {
        if x.is_empty() {
            return None;
        }
        match self {
            PairStatistic::CohensKappa => kappa_of(x, y),
            PairStatistic::PercentAgreement => Some(agreement_rate(x, y)),
        }
    }
}

/// Point estimate with a percentile 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    /// Resamples on which the statistic was undefined.
    pub skipped: usize,
    pub pairs: usize,
}

/// Resample indices for one iteration. Each iteration draws from its own
/// ChaCha stream, so results do not depend on evaluation order.
pub fn resample_indices(n: usize, seed: u64, iteration: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstraps `statistic` over paired labels with both entries present.
///
/// The interval is widened to include the point estimate when the percentile
/// bounds miss it.
pub fn bootstrap_ci<T: Ord + Sync>(
    a: &[Option<T>],
    b: &[Option<T>],
    statistic: PairStatistic,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapInterval> {
    let (x, y, _) = retained_pairs(a, b)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} complete pairs; need at least 2")));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one iteration".into()));
    }
    let point = statistic.evaluate(&x, &y).unwrap_or(1.0);
    let stats: Vec<Option<f64>> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let idx = resample_indices(n, seed, it);
            let rx: Vec<&T> = idx.iter().map(|&i| x[i]).collect();
            let ry: Vec<&T> = idx.iter().map(|&i| y[i]).collect();
            statistic.evaluate(&rx, &ry)
        })
        .collect();
    let mut valid: Vec<f64> = stats.iter().flatten().copied().collect();
    let skipped = iterations - valid.len();
    if valid.is_empty() {
        return Err(Error::Undefined(format!(
            "statistic undefined on all {iterations} resamples"
        )));
    }
    valid.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        point,
        lo: percentile(&valid, 0.025).min(point),
        hi: percentile(&valid, 0.975).max(point),
        iterations,
        skipped,
        pairs: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_have_degenerate_interval() {
        let a: Vec<Option<u8>> = (0..30).map(|i| Some(i % 3)).collect();
        let ci = bootstrap_ci(&a, &a, PairStatistic::CohensKappa, 300, 7).unwrap();
        assert_eq!((ci.point, ci.lo, ci.hi), (1.0, 1.0, 1.0));
        let pa = bootstrap_ci(&a, &a, PairStatistic::PercentAgreement, 300, 7).unwrap();
        assert_eq!((pa.point, pa.lo, pa.hi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn seeded_and_order_independent() {
        let a: Vec<Option<u8>> = (0..40).map(|i| Some((i * 7 % 5) as u8)).collect();
        let b: Vec<Option<u8>> = (0..40).map(|i| Some((i * 3 % 5) as u8)).collect();
        let first = bootstrap_ci(&a, &b, PairStatistic::CohensKappa, 300, 11).unwrap();
        let again = bootstrap_ci(&a, &b, PairStatistic::CohensKappa, 300, 11).unwrap();
        assert_eq!(first, again);
        let other = bootstrap_ci(&a, &b, PairStatistic::CohensKappa, 300, 12).unwrap();
        assert_ne!(first, other);
        assert!(first.lo <= first.point && first.point <= first.hi);
        assert_eq!(resample_indices(10, 3, 5), resample_indices(10, 3, 5));
        assert_ne!(resample_indices(10, 3, 5), resample_indices(10, 3, 6));
    }

    #[test]
    fn undefined_resamples_are_counted() {
        // one disagreement among many constant pairs: most resamples are single-category
        let mut a = vec![Some(0u8); 6];
        let mut b = a.clone();
        a[0] = Some(1);
        b[0] = Some(1);
        let ci = bootstrap_ci(&a, &b, PairStatistic::CohensKappa, 300, 1).unwrap();
        assert!(ci.skipped > 0 && ci.skipped < 300);
        assert!(bootstrap_ci(&[Some(1)], &[Some(1)], PairStatistic::CohensKappa, 300, 1).is_err());
    }

    #[test]
    fn matches_shared_index_oracle() {
        let a: Vec<Option<u8>> = (0..25).map(|i| Some((i * 5 % 4) as u8)).collect();
        let b: Vec<Option<u8>> = (0..25).map(|i| if i % 6 == 0 { None } else { Some((i % 4) as u8) }).collect();
        let ci = bootstrap_ci(&a, &b, PairStatistic::CohensKappa, 300, 99).unwrap();

        let pairs: Vec<(u8, u8)> = a.iter().zip(&b).filter_map(|(p, q)| Some(((*p)?, (*q)?))).collect();
        let kappa = |s: &[(u8, u8)]| -> Option<f64> {
            let n = s.len() as f64;
            let po = s.iter().filter(|(p, q)| p == q).count() as f64 / n;
            let pe: f64 = (0..4u8)
                .map(|k| {
                    let ca = s.iter().filter(|(p, _)| *p == k).count() as f64;
                    let cb = s.iter().filter(|(_, q)| *q == k).count() as f64;
                    ca * cb / (n * n)
                })
                .sum();
            ((1.0 - pe).abs() > 1e-15).then(|| (po - pe) / (1.0 - pe))
        };
        let mut vals: Vec<f64> = (0..300)
            .filter_map(|it| {
                let s: Vec<(u8, u8)> = resample_indices(pairs.len(), 99, it).iter().map(|&i| pairs[i]).collect();
                kappa(&s)
            })
            .collect();
        vals.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let q = |f: f64| {
            let pos = f * (vals.len() - 1) as f64;
            let (l, h) = (pos.floor() as usize, pos.ceil() as usize);
            vals[l] * (1.0 - (pos - l as f64)) + vals[h] * (pos - l as f64)
        };
        assert!((ci.lo - q(0.025).min(ci.point)).abs() < 1e-9);
        assert!((ci.hi - q(0.975).max(ci.point)).abs() < 1e-9);
        assert!((ci.point - kappa(&pairs).unwrap()).abs() < 1e-12);
    }
}
