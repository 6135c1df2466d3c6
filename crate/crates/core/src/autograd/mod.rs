//! Minimal reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor).

mod graph;
pub mod kernels;

pub use graph::{Gradients, Graph, Var};
