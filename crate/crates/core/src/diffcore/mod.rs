//! Reverse-mode differentiation substrate, optimizer, and gradient oracle.

mod adam;
mod fd;
mod graph;

pub use adam::{adam_step, AdamState};
pub use fd::{finite_diff_grad, max_relative_error};
pub use graph::{sigmoid, softplus, Graph, Var};
