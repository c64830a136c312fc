use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{Result, TrainConfig};

/// Mean component losses over the steps of one epoch. Components outside
/// the objective are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub total: f64,
    pub attention: f64,
    pub movement: f64,
    pub visual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochLosses>,
    pub steps: u64,
    pub wall_seconds: f64,
    pub checkpoint: Option<PathBuf>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// `epoch,L_total,L_attn,L_move,L_vis`, preceded by a `#` line holding
    /// the resolved configuration as JSON.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        writeln!(out, "# config: {cfg}")?;
        writeln!(out, "epoch,L_total,L_attn,L_move,L_vis")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{},{}", e.epoch, e.total, e.attention, e.movement, e.visual)?;
        }
        Ok(())
    }

    /// Pretty JSON with the configuration, per-epoch losses and run facts.
    pub fn summary(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Relative decrease of the total loss from the first to the last epoch.
    pub fn total_drop(&self) -> Option<f64> {
        let first = self.epochs.first()?.total;
        let last = self.epochs.last()?.total;
        (first > 0.0).then(|| 1.0 - last / first)
    }
}
