//! Reverse-mode differentiation over small dense `f64` tensors.
//!
//! Graphs are built dynamically: every [`DiffNode`] holds its value, the op
//! that produced it and links to its parents. [`grad`] walks the graph in
//! reverse and, when asked to `create_graph`, expresses each backward step
//! with the same differentiable ops, so gradients of gradients are available
//! for second-order meta-learning.
//!
//! All reductions accumulate left to right in index order; identical inputs
//! always give bitwise-identical outputs.

mod finite_diff;
mod grad;
mod node;
mod tensor;

pub use finite_diff::{finite_diff, finite_diff_tensor, max_relative_error};
pub use grad::{grad, GradMap};
pub use node::{apply, concat, DiffNode, Op};
pub use tensor::Tensor;
