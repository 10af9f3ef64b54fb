//! Dense-matrix arithmetic and reverse-mode automatic differentiation.

mod check;
mod graph;
mod matrix;

pub use check::{gradient_check, DEFAULT_EPSILON};
pub use graph::{Graph, NodeId};
pub use matrix::Matrix;

#[cfg(test)]
mod tests;
