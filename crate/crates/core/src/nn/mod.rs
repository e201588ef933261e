//! Model construction, initialization and forward evaluation.

mod forward;
mod init;
mod spec;
mod weights;

pub use forward::{forward, forward_with_stats, predict, ForwardOutput, LayerStats, NoiseConfig};
pub use init::{calibrate, init_weights};
pub use spec::{
    canonical_convnet_spec, mlp_spec, Augmentation, LayerSpec, ModelSpec, Normalization,
};
pub use weights::{
    combine_weights, parameter_layout, BoundWeights, GradientSet, Param, WeightSet,
};
