//! Datasets, normalization, augmentation, label removal and batch sampling.

pub mod augment;
pub mod dataset;
pub mod idx;
pub mod moons;
pub mod normalize;
pub mod sampler;

pub use augment::{augment, augment_batch, AugmentConfig, Border, Transform};
pub use dataset::{fully_labeled, remove_labels, Dataset, SemiSupervisedSplit};
pub use idx::{load_idx, write_idx, IdxEncoding};
pub use moons::make_two_moons;
pub use normalize::{standardize, zca_whiten, Standardizer, ZcaWhitener, DEFAULT_ZCA_EPSILON};
pub use sampler::{
    expected_labeled_per_batch, Batch, BatchMode, SamplerConfig, SamplerState, StreamPosition,
    TrainingSet,
};
