//! Reverse-mode differentiation over dense double-precision matrices.
//!
//! Operations record themselves on a [`Graph`] as they execute; [`Graph::backward`]
//! sweeps the tape in reverse. Every op validates shapes and rejects
//! non-finite outputs, naming itself in the error.

pub mod check;
mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var, ACOS_EPS, LAYER_NORM_EPS};
pub use tensor::Tensor;
