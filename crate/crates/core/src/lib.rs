//! Concept-level feature visualization for transformer image classifiers.
//!
//! The crate covers the whole analysis chain for a frozen-backbone vision
//! transformer with a trainable linear head:
//!
//! * [`data`]: patch ingestion, grouped stratified folds, augmentation and
//!   input normalization.
//! * [`model`]: a small vision transformer with per-layer cls-token capture,
//!   hand-written backpropagation, linear-head training and evaluation.
//! * [`featvis`]: Fourier-parameterized image optimization for class
//!   visualizations and feature inversion.
//! * [`atlas`]: activation capture, 2-D embedding, grid aggregation, per-cell
//!   attribution and atlas synthesis/export.
//! * [`surrogate`]: Ledoit-Wolf/Mahalanobis, LPIPS-form and cosine distances and
//!   per-cell label assignment.
//! * [`agreement`]: Fleiss' κ, Cohen's κ with bootstrap intervals,
//!   Krippendorff's α and descriptive metrics.

pub mod agreement;
pub mod atlas;
pub mod data;
pub mod error;
pub mod featvis;
pub mod fingerprint;
pub mod image;
pub mod model;
pub mod optim;
pub mod surrogate;

pub use error::{Error, Result};
pub use image::ImageTensor;

/// Label code reserved for "uncertain" annotations.
pub const UNCERTAIN_CODE: &str = "???";
