use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::data::JitterConfig;
use crate::encoder::{ModelConfig, PARTS};
use crate::nn::Algorithm;
use crate::objectives::{Denominator, LossWeights, VisualMode};

/// Which supervised terms join the visual loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveMode {
    #[serde(rename = "vis")]
    Vis,
    #[serde(rename = "vis-attn")]
    VisAttn,
    #[serde(rename = "vis-move")]
    VisMove,
    #[serde(rename = "vis-move-attn")]
    VisMoveAttn,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 4] = [Self::Vis, Self::VisAttn, Self::VisMove, Self::VisMoveAttn];

    pub fn uses_attention(self) -> bool {
        matches!(self, Self::VisAttn | Self::VisMoveAttn)
    }

    pub fn uses_movement(self) -> bool {
        matches!(self, Self::VisMove | Self::VisMoveAttn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Vis => "vis",
            Self::VisAttn => "vis-attn",
            Self::VisMove => "vis-move",
            Self::VisMoveAttn => "vis-move-attn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Expands part names and the `arms`/`legs` group aliases to part indices.
pub fn parse_parts(names: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for n in names {
        let idx = match n.trim() {
            "arms" => vec![2, 3],
            "legs" => vec![4, 5],
            other => match PARTS.iter().position(|p| *p == other) {
                Some(i) => vec![i],
                None => return Err(TrainError::Config(format!("unknown body part `{other}`"))),
            },
        };
        for i in idx {
            if !out.contains(&i) {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: ObjectiveMode,
    pub visual: VisualMode,
    /// Weights of the terms the mode includes. Excluded terms are zeroed by
    /// [`TrainConfig::effective_weights`].
    pub weights: LossWeights,
    /// Part names or `arms`/`legs`; their movement entries are never supervised.
    pub mask_parts: Vec<String>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to SGD for `vis` and Adam otherwise.
    pub optimizer: Option<Algorithm>,
    /// Defaults to 0.03 for SGD and 1e-3 for Adam.
    pub lr: Option<f64>,
    /// Global gradient norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Parameter initialization and memory bank.
    pub seed: u64,
    /// Batch order and augmentation.
    pub data_seed: u64,
    pub bank_size: usize,
    pub momentum: f64,
    pub tau: f64,
    pub denominator: Denominator,
    /// Divide the reconstruction norm by the elements per image.
    pub ae_normalize: bool,
    pub jitter: JitterConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ObjectiveMode::VisMoveAttn,
            visual: VisualMode::Infonce,
            weights: LossWeights::default(),
            mask_parts: Vec::new(),
            batch_size: 32,
            epochs: 30,
            optimizer: None,
            lr: None,
            clip_norm: Some(5.0),
            seed: 0,
            data_seed: 1,
            bank_size: 4096,
            momentum: 0.999,
            tau: 0.07,
            denominator: Denominator::WithPositive,
            ae_normalize: true,
            jitter: JitterConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn algorithm(&self) -> Algorithm {
        self.optimizer.unwrap_or(match self.mode {
            ObjectiveMode::Vis => Algorithm::Sgd,
            _ => Algorithm::Adam,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.algorithm() {
            Algorithm::Sgd => 0.03,
            Algorithm::Adam => 1e-3,
        })
    }

    /// Weights with the terms outside `mode` and `visual` set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            alpha: if self.mode.uses_attention() { self.weights.alpha } else { 0.0 },
            beta: if self.mode.uses_movement() { self.weights.beta } else { 0.0 },
            gamma: if self.visual == VisualMode::None { 0.0 } else { self.weights.gamma },
            delta: self.weights.delta,
        }
    }

    pub fn masked_part_indices(&self) -> Result<Vec<usize>> {
        parse_parts(&self.mask_parts)
    }

    /// Model configuration with the optional decoders the objective needs.
    pub fn resolved_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.ae_decoder = self.visual == VisualMode::Ae;
        m
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.effective_weights();
        w.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let included = [
            (self.mode.uses_attention(), self.weights.alpha, "attention (alpha)"),
            (self.mode.uses_movement(), self.weights.beta, "movement (beta)"),
            (self.visual != VisualMode::None, self.weights.gamma, "visual (gamma)"),
        ];
        for (on, weight, name) in included {
            if on && weight == 0.0 {
                return Err(TrainError::Config(format!(
                    "mode {} {:?} includes the {name} term but its weight is zero",
                    self.mode.name(),
                    self.visual
                )));
            }
        }
        self.masked_part_indices()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate() > 0.0) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.learning_rate())));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(TrainError::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        if self.visual == VisualMode::Infonce {
            if !(self.tau > 0.0) {
                return Err(TrainError::Config(format!("temperature must be positive, got {}", self.tau)));
            }
            if !(0.0..=1.0).contains(&self.momentum) {
                return Err(TrainError::Config(format!("momentum must lie in [0, 1], got {}", self.momentum)));
            }
            if self.bank_size == 0 {
                return Err(TrainError::Config("memory bank size must be positive".into()));
            }
        }
        self.resolved_model().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in ObjectiveMode::ALL {
            assert_eq!(ObjectiveMode::parse(m.name()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn per_mode_defaults() {
        let mut c = TrainConfig { mode: ObjectiveMode::Vis, ..Default::default() };
        assert_eq!(c.algorithm(), Algorithm::Sgd);
        assert_eq!(c.learning_rate(), 0.03);
        let w = c.effective_weights();
        assert_eq!((w.alpha, w.beta), (0.0, 0.0));
        c.mode = ObjectiveMode::VisMove;
        assert_eq!(c.algorithm(), Algorithm::Adam);
        assert_eq!(c.learning_rate(), 1e-3);
        assert_eq!(c.effective_weights().alpha, 0.0);
        assert_eq!(c.effective_weights().beta, 0.01);
    }

    #[test]
    fn part_aliases() {
        let p = parse_parts(&["legs".into(), "torso".into(), "left_leg".into()]).unwrap();
        assert_eq!(p, vec![0, 4, 5]);
        assert!(parse_parts(&["tail".into()]).is_err());
    }

    #[test]
    fn inconsistent_weights_rejected() {
        let mut c = TrainConfig::default();
        c.weights.beta = 0.0;
        assert!(c.validate().is_err());
        c.mode = ObjectiveMode::VisAttn;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_overrides_defaults() {
        let c: TrainConfig = toml::from_str("epochs = 3\n[weights]\nalpha = 0.5\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.weights.alpha, 0.5);
        assert_eq!(c.batch_size, 32);
        assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
    }
}
