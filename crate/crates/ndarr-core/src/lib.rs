//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Values live in [`Tensor`]s (row-major `f32`). Differentiable computation is
//! recorded on a [`Graph`]: every operation appends a node holding its output
//! and the ids of its inputs, so node order is already a topological order.
//! [`Graph::backward`] walks that order in reverse and leaves gradients on the
//! leaves that asked for them.
//!
//! ```
//! use ndarr_core::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq, &[0]).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod error;
pub mod gradcheck;
mod graph;
mod linalg;
mod ops;
pub mod rng;
mod tensor;

pub use error::{NdError, Result};
pub use gradcheck::{grad_check, grad_check_with, Estimator, GradCheckOptions};
pub use graph::{Graph, Var};
pub use ops::elementwise::{BinaryKind, UnaryKind};
pub use ops::reduce::ReduceKind;
pub use rng::RngStream;
pub use tensor::Tensor;
