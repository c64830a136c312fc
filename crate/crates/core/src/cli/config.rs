use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CliError, ExitKind};
use crate::data::WorldConfig;
use crate::sync::{AudioConfig, RansacConfig};
use crate::trainer::TrainConfig;
use crate::transfer::TransferConfig;

/// Sensor-synchronization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSettings {
    pub audio: AudioConfig,
    pub ransac: RansacConfig,
    /// IMU gaps longer than this many frame intervals leave a frame missing.
    pub max_gap_intervals: f64,
}

impl Default for SyncSettings {
    fn default() -> Self {
        Self { audio: AudioConfig::default(), ransac: RansacConfig::default(), max_gap_intervals: 2.0 }
    }
}

/// Every tunable, layered as defaults, then the `--config` TOML file, then
/// command-line flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub sync: SyncSettings,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new(ExitKind::Usage, format!("config: {}", e.message())))
    }

    /// Defaults, overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::new(ExitKind::Io, format!("config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
