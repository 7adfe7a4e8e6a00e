//! Minimal reverse-mode automatic differentiation for the stroke encoder and
//! sketch generator.
//!
//! Tensors are dense `f64` matrices. A [`Graph`] is a tape: each primitive pushes
//! a node holding its forward value, and [`Graph::backward`] applies the adjoint
//! rules in reverse order. Trainable values live in a [`ParamStore`]; a graph
//! binds them as leaves and [`Graph::accumulate_into`] adds their gradients back.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{logsumexp, sigmoid, Gradients, Graph, Var};
pub use nn::{
    masked_step, rnn_cell, run_bidirectional, BiOutputs, BoundCell, BoundLinear, CellKind, Linear,
    RnnCell,
};
pub use params::{
    clip_grad_norm, NamedTensor, Optimizer, OptimizerConfig, OptimizerState, ParamId, ParamStore,
};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient; optimizer step aborted")]
    NonFiniteGradient,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
