//! Minimal CPU autograd for convolutional networks.
//!
//! A [`Graph`] records one forward pass over NCHW activations. Weights live in a
//! [`ParamStore`] and are referenced by [`ParamId`]; [`Graph::backward`] takes
//! gradients for any output nodes and accumulates parameter gradients into a
//! [`GradStore`]. Everything runs on one thread, so results are bit-reproducible.

mod gemm;
pub mod graph;
pub mod optim;
pub mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{GradStore, ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}
