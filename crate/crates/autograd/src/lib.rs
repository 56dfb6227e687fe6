//! Dense row-major `f32` tensors with define-by-run reverse-mode automatic
//! differentiation.
//!
//! Every operation that receives at least one input with `requires_grad`
//! records itself on the implicit tape (a DAG of [`Tensor`] nodes). Calling
//! [`Tensor::backward`] on a scalar walks that DAG in reverse topological
//! order and accumulates adjoints into every participating tensor. The tape
//! is rebuilt on every forward pass, which makes recurrent unrolling trivial.
//!
//! ```
//! use symfuse_autograd::Tensor;
//!
//! let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
//! let loss = x.square().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
//! ```

mod error;
pub mod fault;
pub mod functional;
pub mod gradcheck;
mod kernels;
pub mod memory;
mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
