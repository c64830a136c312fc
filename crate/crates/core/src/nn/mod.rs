//! Layers, parameter storage, initialization and optimizers.

mod backbone;
pub mod checkpoint;
pub mod init;
mod layers;
mod lstm;
mod optim;
mod params;

pub use backbone::{Backbone, BackboneConfig, BackboneOutput};
pub use layers::{ChannelAffine, Conv2d, Linear};
pub use lstm::{LstmLayer, LstmStack, LstmState};
pub use optim::{clip_global_norm, Algorithm, Optimizer, OptimizerState};
pub use params::{grad_check_params, Bound, Grads, ParamBuilder, ParamId, ParamStore};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Slope used by every leaky-ReLU in the heads and decoders.
pub const LEAKY_SLOPE: f64 = 0.01;
