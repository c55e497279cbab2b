//! Patch ingestion, leakage-safe folds, augmentation and normalization.

mod augment;
mod classmap;
mod folds;
mod folder;
mod normalize;
pub mod synthetic;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use classmap::{ClassEntry, ClassMap};
pub use folds::{stratified_group_kfold, FoldAssignment, FoldReport};
pub use folder::{load_image_folder, parse_group_id, LabeledPatch, LoadReport};
pub use normalize::{denormalize, normalize, Normalization, IMAGENET_MEAN, IMAGENET_STD};

/// Class histogram of a patch set.
pub fn class_histogram(patches: &[LabeledPatch], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for p in patches {
        counts[p.class_id] += 1;
    }
    counts
}

/// Hash over patch ids, labels, groups and pixel values.
pub fn dataset_fingerprint(patches: &[LabeledPatch]) -> String {
    let mut fp = crate::fingerprint::Fingerprint::new();
    fp.str("dataset").u64(patches.len() as u64);
    for p in patches {
        fp.str(&p.id).u64(p.class_id as u64).str(&p.group_id);
        fp.f64s(p.image.data().as_slice().unwrap_or(&p.image.data().iter().copied().collect::<Vec<_>>()));
    }
    fp.finish()
}
