//! Vision-transformer backbone, linear head, training and evaluation.

mod checkpoint;
mod classifier;
mod eval;
pub mod layers;
mod spec;
mod train;
mod vit;

pub use checkpoint::{Checkpoint, CAPTURE_POINT, CHECKPOINT_VERSION};
pub use classifier::{argmax, softmax, CapturedForward, Classifier, LinearHead};
pub use eval::{binary_auroc, evaluate, evaluate_scores, EvalReport};
pub use spec::BackboneSpec;
pub use train::{
    cross_entropy, extract_features, train_head_on_features, train_linear_head, EpochLog, FeatureSet,
    TrainConfig, TrainingLog,
};
pub use vit::{Backbone, BackboneOutput, VisionTransformer};


