//! Minimal dense tensor engine with tape-based reverse-mode differentiation.
//!
//! Values are row-major `f32` buffers ([`Tensor`]). Computations that need
//! gradients are recorded on a [`Graph`]: leaves are registered with
//! [`Graph::param`] (differentiable) or [`Graph::constant`], every primitive
//! applied to a [`Var`] appends a node, and [`Graph::backward`] replays the
//! tape in reverse.
//!
//! ```
//! use curvprobe_tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```
//!
//! A graph is single-threaded. Plain tensors are immutable values and can be
//! shared freely across threads; parallelism belongs one level up.

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BatchNormStats, Gradients, Graph, Var};
pub use kernels::ConvGeometry;
pub use tensor::Tensor;
