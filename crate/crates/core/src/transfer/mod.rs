//! Frozen-backbone transfer: five task heads trained on fixed features and
//! scored with class-balanced top-1, IoU or RMSE-log.

mod evaluate;
mod heads;
mod metrics;

pub use evaluate::{
    evaluate, evaluate_tasks, split_indices, FeatureCache, FrozenBackbone, ResultsTable, TaskResult, TransferConfig,
};
pub use heads::{cross_entropy, Geometry, Head, HeadConfig, HeadInput, DENSE_UPCONVS};
pub use metrics::{iou, per_class_top1, rmse_log, ClassAccuracy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{NUM_SCRIPTS, NUM_SHAPES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Majority object shape of the first frame.
    Scene,
    /// Scripted action over the whole sequence.
    Action,
    /// Marked object's shape and resting place, given its box mask.
    Dynamics,
    /// Ground pixels not covered by objects.
    Walkable,
    /// Per-pixel distance.
    Depth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PerClassTop1,
    Iou,
    RmseLog,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [Self::Scene, Self::Action, Self::Dynamics, Self::Walkable, Self::Depth];

    pub fn name(self) -> &'static str {
        match self {
            Self::Scene => "scene",
            Self::Action => "action",
            Self::Dynamics => "dynamics",
            Self::Walkable => "walkable",
            Self::Depth => "depth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s.trim())
    }

    /// `all` or a comma-separated list.
    pub fn parse_list(s: &str) -> Option<Vec<Self>> {
        if s.trim() == "all" {
            return Some(Self::ALL.to_vec());
        }
        s.split(',').map(Self::parse).collect()
    }

    pub fn metric(self) -> Metric {
        match self {
            Self::Scene | Self::Action | Self::Dynamics => Metric::PerClassTop1,
            Self::Walkable => Metric::Iou,
            Self::Depth => Metric::RmseLog,
        }
    }

    pub fn classes(self) -> Option<usize> {
        match self {
            Self::Scene => Some(NUM_SHAPES),
            Self::Action => Some(NUM_SCRIPTS),
            Self::Dynamics => Some(NUM_SHAPES * 2),
            Self::Walkable | Self::Depth => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("incompatible geometry: {0}")]
    Geometry(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("backbone parameters changed during evaluation")]
    BackboneModified,
    #[error("non-finite head loss on task {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::tensor::TensorError> for TransferError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TransferError::Nn(e.into())
    }
}

pub type Result<T, E = TransferError> = std::result::Result<T, E>;
