//! Reverse-mode automatic differentiation over dense rank ≤ 2 tensors.
//!
//! A [`Graph`] is a define-by-run tape: calling an op evaluates it and
//! records the backward rule, so "forward" is simply building the graph and
//! [`Graph::backward`] sweeps it in reverse topological order.

mod finite_diff;
mod graph;
mod tensor;

pub use finite_diff::finite_diff_check;
pub use graph::{Axis, Gradients, Graph, NodeId};
pub use tensor::Tensor;
