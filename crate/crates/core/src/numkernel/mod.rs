//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Only the operations needed by the encoder and its losses are provided.
//! For inputs of magnitude below 1e3, every op yields finite output; softmax,
//! cross-entropy and sigmoid are written in their overflow-safe forms and
//! accept any finite input.

mod graph;
mod tensor;

pub use graph::{Graph, Var, MIN_NORM};
pub use tensor::{matmul_values, Tensor};

pub(crate) use graph::softmax_in_place;
