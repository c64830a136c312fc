//! Sensor synchronization and movement labeling: audio time offsets,
//! gaze-camera homographies, IMU orientation deltas and tertile labels.

mod audio;
pub mod formats;
mod homography;
mod imu;
mod labels;

pub use audio::{audio_offset, AudioConfig};
pub use homography::{estimate_homography, fit_homography, remap_gaze, Correspondence, Homography, RansacConfig};
pub use imu::{movement_magnitudes, Quat, QuatSample, Sensor, NUM_SENSORS};
pub use labels::{
    group_label, label_movements, label_sensor, tertile_thresholds, LabelOutput, SensorLabel, PART_SENSORS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("signal has zero variance")]
    FlatSignal,
    #[error("signals overlap by less than {needed} samples at every lag")]
    InsufficientOverlap { needed: usize },
    #[error("sample rates differ: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("consensus of {found} inliers is below the required {needed}")]
    Consensus { found: usize, needed: usize },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SyncError> = std::result::Result<T, E>;
