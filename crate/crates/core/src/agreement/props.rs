use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::UNCERTAIN_CODE;

const CODES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn build(cats: usize, rows: &[Vec<Option<String>>]) -> AnnotationMatrix {
    AnnotationMatrix::new(
        (0..rows.len()).map(|i| format!("i{i}")).collect(),
        (0..rows[0].len()).map(|r| format!("r{r}")).collect(),
        CODES[..cats].iter().map(|c| c.to_string()).collect(),
        rows.to_vec(),
    )
    .unwrap()
}

/// Entries: 0..cats is a code, cats is `???`, above is missing.
fn matrix_strategy() -> impl Strategy<Value = (usize, Vec<Vec<Option<String>>>)> {
    (1usize..=6, 1usize..=12, 2usize..=5).prop_flat_map(|(cats, items, raters)| {
        let cell = (0..cats + 3).prop_map(move |v| match v {
            v if v < cats => Some(CODES[v].to_string()),
            v if v == cats => Some(UNCERTAIN_CODE.to_string()),
            _ => None,
        });
        (Just(cats), prop::collection::vec(prop::collection::vec(cell, raters), items))
    })
}

/// Direct Fleiss formula over complete rows.
fn fleiss_oracle(rows: &[Vec<usize>], raters: usize) -> Option<f64> {
    let n = raters as f64;
    let cats: Vec<usize> = {
        let mut c: Vec<usize> = rows.iter().flatten().copied().collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let big_n = rows.len() as f64;
    let p_bar = rows
        .iter()
        .map(|r| {
            let s: f64 = cats
                .iter()
                .map(|&k| {
                    let nij = r.iter().filter(|&&v| v == k).count() as f64;
                    nij * (nij - 1.0)
                })
                .sum();
            s / (n * (n - 1.0))
        })
        .sum::<f64>()
        / big_n;
    let p_e: f64 = cats
        .iter()
        .map(|&k| {
            let pj = rows.iter().flatten().filter(|&&v| v == k).count() as f64 / (big_n * n);
            pj * pj
        })
        .sum();
    (cats.len() > 1).then(|| (p_bar - p_e) / (1.0 - p_e))
}

/// α by enumerating ordered pairs of ratings within each item.
fn alpha_oracle(rows: &[Vec<Option<usize>>]) -> Option<f64> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for r in rows {
        let vals: Vec<usize> = r.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    pairs.push((vals[i], vals[j], 1.0 / (m - 1) as f64));
                }
            }
        }
    }
    let n: f64 = pairs.iter().map(|p| p.2).sum();
    let d_o: f64 = pairs.iter().filter(|p| p.0 != p.1).map(|p| p.2).sum::<f64>() / n;
    let values: Vec<usize> = {
        let mut v: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let nc = |c: usize| pairs.iter().filter(|p| p.0 == c).map(|p| p.2).sum::<f64>();
    let mut d_e = 0.0;
    for &c in &values {
        for &k in &values {
            if c != k {
                d_e += nc(c) * nc(k);
            }
        }
    }
    d_e /= n * (n - 1.0);
    (d_e > 0.0).then(|| 1.0 - d_o / d_e)
}

fn code_rows(m: &AnnotationMatrix, mode: UncertainMode) -> Vec<Vec<Option<usize>>> {
    m.coded(mode).rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn statistics_match_direct_formulas((cats, rows) in matrix_strategy()) {
        let m = build(cats, &rows);
        for mode in [UncertainMode::Exclude, UncertainMode::Category] {
            let coded = code_rows(&m, mode);
            let complete: Vec<Vec<usize>> = coded
                .iter()
                .filter(|r| r.iter().all(Option::is_some))
                .map(|r| r.iter().flatten().copied().collect())
                .collect();
            match fleiss_kappa(&m, mode) {
                Ok(k) if k.degenerate => prop_assert!(fleiss_oracle(&complete, m.num_raters()).is_none()),
                Ok(k) => prop_assert!((k.value - fleiss_oracle(&complete, m.num_raters()).unwrap()).abs() < 1e-9),
                Err(_) => prop_assert!(complete.is_empty()),
            }
            if let Ok(a) = krippendorff_alpha(&m, mode) {
                match alpha_oracle(&coded) {
                    Some(v) => prop_assert!((a.value - v).abs() < 1e-9),
                    None => prop_assert!(a.degenerate),
                }
            }
        }
    }

    #[test]
    fn values_stay_in_range((cats, rows) in matrix_strategy()) {
        let m = build(cats, &rows);
        for mode in [UncertainMode::Exclude, UncertainMode::Category] {
            if let Ok(k) = fleiss_kappa(&m, mode) {
                prop_assert!((-1.0..=1.0).contains(&k.value));
            }
            let coded = code_rows(&m, mode);
            let col = |r: usize| coded.iter().map(|row| row[r]).collect::<Vec<_>>();
            if let Ok(k) = cohens_kappa(&col(0), &col(1)) {
                prop_assert!((-1.0..=1.0).contains(&k.value));
            }
        }
    }

    #[test]
    fn cohen_is_exactly_symmetric((cats, rows) in matrix_strategy()) {
        let m = build(cats, &rows);
        let (a, b) = (m.column(0), m.column(1));
        match (cohens_kappa(&a, &b), cohens_kappa(&b, &a)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x.value.to_bits(), y.value.to_bits()),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn relabeling_leaves_statistics_unchanged((cats, rows) in matrix_strategy(), shift in 1usize..6) {
        let m = build(cats, &rows);
        let perm = |l: &str| -> String {
            match CODES[..cats].iter().position(|c| *c == l) {
                Some(i) => CODES[(i + shift) % cats].to_string(),
                None => l.to_string(),
            }
        };
        let relabeled: Vec<Vec<Option<String>>> =
            rows.iter().map(|r| r.iter().map(|l| l.as_deref().map(perm)).collect()).collect();
        let p = build(cats, &relabeled);
        for mode in [UncertainMode::Exclude, UncertainMode::Category] {
            let pairs = [
                (fleiss_kappa(&m, mode).ok(), fleiss_kappa(&p, mode).ok()),
                (krippendorff_alpha(&m, mode).ok(), krippendorff_alpha(&p, mode).ok()),
            ];
            for (x, y) in pairs {
                prop_assert_eq!(x.is_some(), y.is_some());
                if let (Some(x), Some(y)) = (x, y) {
                    prop_assert!((x.value - y.value).abs() < 1e-12);
                }
            }
        }
        let (x, y) = (cohens_kappa(&m.column(0), &m.column(1)), cohens_kappa(&p.column(0), &p.column(1)));
        if let (Ok(x), Ok(y)) = (x, y) {
            prop_assert!((x.value - y.value).abs() < 1e-12);
        }
    }

    #[test]
    fn excluded_items_do_not_influence_report((cats, rows) in matrix_strategy(), seed in any::<u64>()) {
        let m = build(cats, &rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // rewrite the other ratings of every item that carries `???`
        let mutated: Vec<Vec<Option<String>>> = rows
            .iter()
            .map(|r| {
                if !r.iter().any(|l| l.as_deref() == Some(UNCERTAIN_CODE)) {
                    return r.clone();
                }
                r.iter()
                    .map(|l| match l.as_deref() {
                        Some(UNCERTAIN_CODE) => l.clone(),
                        _ => Some(CODES[rng.random_range(0..cats)].to_string()),
                    })
                    .collect()
            })
            .collect();
        let opts = ReportOptions { iterations: 20, ..ReportOptions::default() };
        let before = agreement_report(&m, &opts).unwrap();
        let after = agreement_report(&build(cats, &mutated), &opts).unwrap();
        prop_assert_eq!(before, after);
    }
}

#[test]
fn alpha_tracks_fleiss_on_large_complete_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<Option<String>>> = (0..200)
        .map(|_| {
            let truth = rng.random_range(0..4);
            (0..4)
                .map(|_| {
                    let v = if rng.random::<f64>() < 0.6 { truth } else { rng.random_range(0..4) };
                    Some(CODES[v].to_string())
                })
                .collect()
        })
        .collect();
    let m = build(4, &rows);
    let k = fleiss_kappa(&m, UncertainMode::Exclude).unwrap().value;
    let a = krippendorff_alpha(&m, UncertainMode::Exclude).unwrap().value;
    assert!((k - a).abs() < 0.02, "kappa {k} alpha {a}");
}

#[test]
fn perfect_agreement_is_exactly_one() {
    let rows: Vec<Vec<Option<String>>> = (0..9).map(|i| vec![Some(CODES[i % 3].to_string()); 4]).collect();
    let m = build(3, &rows);
    assert_eq!(fleiss_kappa(&m, UncertainMode::Exclude).unwrap().value, 1.0);
    assert_eq!(krippendorff_alpha(&m, UncertainMode::Exclude).unwrap().value, 1.0);
    assert_eq!(cohens_kappa(&m.column(0), &m.column(3)).unwrap().value, 1.0);
}
