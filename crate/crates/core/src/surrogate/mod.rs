//! Label assignment for atlas cells: attribution, Mahalanobis distance under
//! Ledoit-Wolf shrinkage, LPIPS-form perceptual distance and cosine embedding
//! distance, each with nearest-neighbour or class-mean strategies.

mod extractor;
mod labels;
mod metrics;

pub use extractor::{BackboneExtractor, FeatureExtractor, LayerShape, RandomConvExtractor};
pub use labels::{
    assign_labels, build_reference_set, mahalanobis_label, majority_gt_labels, pick, ClassReference, LabelEntry,
    LabelMap, Method, ReferenceSet, Strategy, write_label_maps, DEFAULT_REFERENCES_PER_CLASS,
};
pub use metrics::{
    cosine_distance, ledoit_wolf_fit, lpips, lpips_features, mahalanobis_sq, pseudo_inverse, GaussianFit,
};

#[cfg(test)]
mod tests;
