use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, BootstrapInterval, PairStatistic, DEFAULT_BOOTSTRAP_ITERATIONS};
use super::descriptive::{class_coverage, descriptive_metrics, overlap_fractions, Coverage, DescriptiveMetrics, Overlap};
use super::kappa::{alpha_coded, cohens_kappa, fleiss_coded, percent_agreement, Agreement};
use super::{AnnotationMatrix, UncertainMode};
use crate::error::{Error, Result};
use crate::UNCERTAIN_CODE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub uncertain_mode: UncertainMode,
    pub iterations: usize,
    pub seed: u64,
    /// Rater treated as ground truth: left out of Fleiss' κ and α, and
    /// compared against every other rater with descriptive metrics.
    pub reference: Option<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            uncertain_mode: UncertainMode::Exclude,
            iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            seed: 0,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub pairs: usize,
    pub kappa: Option<Agreement>,
    pub kappa_ci: Option<BootstrapInterval>,
    pub percent: Option<f64>,
    pub percent_ci: Option<BootstrapInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub rater: String,
    pub metrics: Option<DescriptiveMetrics>,
    pub overlap: Vec<Overlap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub uncertain_mode: UncertainMode,
    pub items: usize,
    pub excluded_items: usize,
    pub raters: Vec<String>,
    pub categories: Vec<String>,
    pub fleiss_kappa: Option<Agreement>,
    pub krippendorff_alpha: Option<Agreement>,
    pub pairwise: Vec<PairwiseAgreement>,
    pub coverage: Vec<Coverage>,
    pub reference: Option<String>,
    pub comparisons: Vec<ReferenceComparison>,
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Full agreement suite over one annotation matrix.
pub fn agreement_report(matrix: &AnnotationMatrix, options: &ReportOptions) -> Result<AgreementReport> {
    let mode = options.uncertain_mode;
    let coded = matrix.coded(mode);
    let mut categories = matrix.vocabulary().to_vec();
    if mode == UncertainMode::Category {
        categories.push(UNCERTAIN_CODE.to_string());
    }
    let reference = match &options.reference {
        Some(id) => Some(
            matrix
                .rater_index(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown reference rater `{id}`")))?,
        ),
        None => None,
    };
    let mut warnings = Vec::new();
    if coded.excluded_items > 0 {
        warnings.push(format!("{} items excluded for uncertain labels", coded.excluded_items));
    }
    let columns: Vec<Vec<Option<usize>>> = (0..matrix.num_raters())
        .map(|r| coded.rows.iter().map(|row| row[r]).collect())
        .collect();

    let raters: Vec<usize> = (0..matrix.num_raters()).filter(|&r| Some(r) != reference).collect();
    let rows: Vec<Vec<Option<usize>>> = coded
        .rows
        .iter()
        .map(|row| raters.iter().map(|&r| row[r]).collect())
        .collect();
    let mut note = |name: &str, r: Result<Agreement>| match r {
        Ok(a) => {
            if a.degenerate {
                warnings.push(format!("{name}: a single category is in use; reported as 1"));
            }
            Some(a)
        }
        Err(e) => {
            warnings.push(format!("{name}: {e}"));
            None
        }
    };
    let fleiss = note("fleiss_kappa", fleiss_coded(&rows, coded.num_categories, coded.excluded_items));
    let alpha = if raters.len() < 2 {
        note("krippendorff_alpha", Err(Error::InsufficientData("fewer than 2 raters".into())))
    } else {
        note("krippendorff_alpha", alpha_coded(&rows, coded.num_categories, coded.excluded_items))
    };

    let mut pairwise = Vec::new();
    for a in 0..matrix.num_raters() {
        for b in a + 1..matrix.num_raters() {
            let (x, y) = (&columns[a], &columns[b]);
            let ci = |s| bootstrap_ci(x, y, s, options.iterations, options.seed).ok();
            let kappa = cohens_kappa(x, y).ok();
            pairwise.push(PairwiseAgreement {
                rater_a: matrix.raters()[a].clone(),
                rater_b: matrix.raters()[b].clone(),
                pairs: x.iter().zip(y).filter(|(p, q)| p.is_some() && q.is_some()).count(),
                kappa,
                kappa_ci: ci(PairStatistic::CohensKappa),
                percent: percent_agreement(x, y).ok(),
                percent_ci: ci(PairStatistic::PercentAgreement),
            });
        }
    }

    let named = |col: &[Option<usize>]| -> Vec<Option<String>> {
        col.iter().map(|v| v.map(|c| categories[c].clone())).collect()
    };
    let coverage = (0..matrix.num_raters())
        .map(|r| class_coverage(&matrix.raters()[r], &named(&columns[r])))
        .collect();

    let mut comparisons = Vec::new();
    if let Some(rf) = reference {
        let classes: Vec<usize> = (0..matrix.vocabulary().len()).collect();
        let all: Vec<usize> = (0..categories.len()).collect();
        for &r in &raters {
            let metrics = match descriptive_metrics(&columns[r], &columns[rf], &classes) {
                Ok(m) => Some(m),
                Err(e) => {
                    warnings.push(format!("{} vs reference: {e}", matrix.raters()[r]));
                    None
                }
            };
            let overlap = overlap_fractions(&columns[r], &columns[rf], &all)?
                .into_iter()
                .zip(&categories)
                .map(|(mut o, code)| {
                    o.class = code.clone();
                    o
                })
                .collect();
            comparisons.push(ReferenceComparison {
                rater: matrix.raters()[r].clone(),
                metrics,
                overlap,
            });
        }
    }

    Ok(AgreementReport {
        uncertain_mode: mode,
        items: coded.rows.len(),
        excluded_items: coded.excluded_items,
        raters: matrix.raters().to_vec(),
        categories,
        fleiss_kappa: fleiss,
        krippendorff_alpha: alpha,
        pairwise,
        coverage,
        reference: options.reference.clone(),
        comparisons,
        bootstrap_iterations: options.iterations,
        seed: options.seed,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl AgreementReport {
    /// Plain-text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "uncertain mode: {}", self.uncertain_mode);
        let _ = writeln!(s, "items: {} ({} excluded)", self.items, self.excluded_items);
        let _ = writeln!(s, "raters: {}", self.raters.join(", "));
        if let Some(r) = &self.reference {
            let _ = writeln!(s, "reference: {r}");
        }
        let _ = writeln!(s, "bootstrap: {} iterations, seed {}", self.bootstrap_iterations, self.seed);
        let stat = |a: &Option<Agreement>| {
            a.map_or("undefined".to_string(), |a| {
                format!("{:.4} over {} items{}", a.value, a.used, if a.degenerate { " (degenerate)" } else { "" })
            })
        };
        let _ = writeln!(s, "fleiss kappa: {}", stat(&self.fleiss_kappa));
        let _ = writeln!(s, "krippendorff alpha: {}", stat(&self.krippendorff_alpha));
        let _ = writeln!(s, "\npairwise cohen kappa:");
        for p in &self.pairwise {
            let ci = |c: &Option<BootstrapInterval>| c.map_or(String::new(), |c| format!(" [{:.4}, {:.4}]", c.lo, c.hi));
            let _ = writeln!(
                s,
                "  {} vs {}: n={} kappa={}{} agreement={}{}",
                p.rater_a,
                p.rater_b,
                p.pairs,
                p.kappa.map_or("undefined".into(), |k| format!("{:.4}", k.value)),
                ci(&p.kappa_ci),
                p.percent.map_or("undefined".into(), |v| format!("{v:.4}")),
                ci(&p.percent_ci),
            );
        }
        for c in &self.comparisons {
            if let Some(m) = &c.metrics {
                let _ = writeln!(
                    s,
                    "\n{} vs reference: accuracy={:.4} macro_f1={:.4} n={}",
                    c.rater, m.accuracy, m.macro_f1, m.pairs
                );
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\nwarnings:");
            for w in &self.warnings {
                let _ = writeln!(s, "  {w}");
            }
        }
        s
    }

    /// `rater_a,rater_b,pairs,kappa,kappa_lo,kappa_hi,percent,percent_lo,percent_hi,skipped`
    pub fn write_pairwise_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rater_a", "rater_b", "pairs", "kappa", "kappa_lo", "kappa_hi", "percent", "percent_lo", "percent_hi",
            "skipped",
        ])?;
        for p in &self.pairwise {
            w.write_record([
                p.rater_a.clone(),
                p.rater_b.clone(),
                p.pairs.to_string(),
                fmt_opt(p.kappa.map(|k| k.value)),
                fmt_opt(p.kappa_ci.map(|c| c.lo)),
                fmt_opt(p.kappa_ci.map(|c| c.hi)),
                fmt_opt(p.percent),
                fmt_opt(p.percent_ci.map(|c| c.lo)),
                fmt_opt(p.percent_ci.map(|c| c.hi)),
                p.kappa_ci.map_or(String::new(), |c| c.skipped.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `source,label,count,proportion`
    pub fn write_coverage_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "label", "count", "proportion"])?;
        for c in &self.coverage {
            for (label, count) in &c.counts {
                w.write_record([
                    c.source.clone(),
                    label.clone(),
                    count.to_string(),
                    fmt_opt(c.proportions.get(label).copied()),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `rater,class,both,count_rater,count_reference,left,right`
    pub fn write_overlap_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rater", "class", "both", "count_rater", "count_reference", "left", "right"])?;
        for c in &self.comparisons {
            for o in &c.overlap {
                w.write_record([
                    c.rater.clone(),
                    o.class.clone(),
                    o.both.to_string(),
                    o.count_a.to_string(),
                    o.count_b.to_string(),
                    fmt_opt(o.left),
                    fmt_opt(o.right),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
