//! Volume ingestion, preprocessing, subject-level fold planning and
//! class-balanced batching.

mod batches;
mod folds;
mod manifest;
mod preprocess;

pub use batches::{balanced_batches, BatchPlan};
pub use folds::{make_fold_plan, Fold, FoldPlan, Subset};
pub use manifest::{
    load_manifest, load_voxels, write_dataset, write_manifest, Label, Laterality, VolumeRecord,
    MANIFEST_HEADER,
};
pub use preprocess::{
    bilinear_resize, preprocess, PreprocessConfig, PreprocessedVolume, IMAGENET_MEAN, IMAGENET_STD,
};
