//! The representation-learning loop: objective modes, optimizer steps,
//! momentum key updates, bank pushes, reports and resumable checkpoints.

mod config;
mod probe;
mod report;
mod run;

pub use config::{parse_parts, ObjectiveMode, TrainConfig};
pub use probe::{movement_accuracy, MovementAccuracy};
pub use report::{EpochLosses, TrainReport};
pub use run::{load_model, NonFiniteDiagnostic, StepLosses, StepResult, Trainer, CHECKPOINT_KIND};

use thiserror::Error;

use crate::data::DataError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {}: {}", .0.step, .0.summary())]
    NonFinite(Box<NonFiniteDiagnostic>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Nn(NnError::Tensor(e))
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests;
