//! Small differentiable building blocks: feed-forward networks, a gated
//! recurrent cell, Adam, and the tensor checkpoint container.

pub mod checkpoint;
mod mlp;
mod optim;
mod recurrent;

use thiserror::Error;

pub use checkpoint::{Checkpoint, Tensor};
pub use mlp::{log_softmax, param_count, softmax, Activation, Head, Mlp, MlpTape};
pub use optim::{clip_grad_norm, Adam};
pub use recurrent::{GruCell, GruTape};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Hidden layer widths per environment for policies and critics.
pub fn table_widths(env: crate::envs::EnvId) -> Vec<usize> {
    use crate::envs::EnvId;
    match env {
        EnvId::RepeatedMatrix => vec![32, 32],
        EnvId::CoopReach | EnvId::WeightedCoopReach => vec![128, 256, 256, 128],
        EnvId::Lbf => vec![128, 128],
    }
}
