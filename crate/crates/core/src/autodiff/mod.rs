//! Reverse-mode automatic differentiation over dense tensors.

mod kernels;
mod primitive;
mod tape;

pub use kernels::{conv_output_extent, Padding};
pub use primitive::Primitive;
pub use tape::{apply_primitive, Gradients, Tape, Var};

pub(crate) use primitive::channel_mean;
