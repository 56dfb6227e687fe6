//! Differentiable operations, implemented as inherent methods on [`Tensor`].
//!
//! [`Tensor`]: crate::Tensor

mod conv;
mod elementwise;
mod matmul;
pub(crate) mod reduce;
mod shape;

pub use conv::conv_output_size;
