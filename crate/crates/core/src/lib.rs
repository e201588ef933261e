//! Semi-supervised consistency training on a small reverse-mode AD engine.
//!
//! The engine is generic over the element type ([`Scalar`]): `f64` for
//! gradient checks and oracles, `f32` for training runs. Concrete aliases
//! for both widths are exported at the crate root.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod nn;
pub mod objectives;
pub mod random;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{apply_primitive, Gradients, Padding, Primitive, Tape, Var};
pub use error::{Error, Result};
pub use nn::{ModelSpec, NoiseConfig, WeightSet};
pub use random::{NoiseKind, RandomSource};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type WeightSet32 = WeightSet<f32>;
pub type WeightSet64 = WeightSet<f64>;
