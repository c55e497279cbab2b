//! Agreement statistics between raters, methods and ground truth.
//!
//! Labels are nominal. The uncertain code `???` is either excluded (every item
//! carrying it is dropped from all statistics) or treated as one more category;
//! the mode is fixed per report.

mod bootstrap;
mod descriptive;
mod kappa;
mod matrix;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use bootstrap::{
    bootstrap_ci, percentile, resample_indices, BootstrapInterval, PairStatistic, DEFAULT_BOOTSTRAP_ITERATIONS,
};
pub use descriptive::{class_coverage, descriptive_metrics, overlap_fractions, Coverage, DescriptiveMetrics, Overlap};
pub use kappa::{cohens_kappa, fleiss_kappa, krippendorff_alpha, percent_agreement, Agreement};
pub use matrix::{cell_item_id, AnnotationMatrix};
pub use report::{agreement_report, AgreementReport, PairwiseAgreement, ReferenceComparison, ReportOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainMode {
    Exclude,
    Category,
}

impl fmt::Display for UncertainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UncertainMode::Exclude => "exclude",
            UncertainMode::Category => "category",
        })
    }
}

impl FromStr for UncertainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exclude" => Ok(UncertainMode::Exclude),
            "category" => Ok(UncertainMode::Category),
            _ => Err(Error::InvalidArgument(format!("uncertain mode `{s}`"))),
        }
    }
}

#[cfg(test)]
mod props;
