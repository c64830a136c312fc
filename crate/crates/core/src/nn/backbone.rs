//! Reduced residual network: a 3×3 stem followed by one basic block per stage.
//!
//! Normalization layers are replaced by a learned per-channel affine, and the
//! input is mapped from `[0, 1]` to `[-1, 1]` before the stem.

use serde::{Deserialize, Serialize};

use super::layers::{ChannelAffine, Conv2d};
use super::{Bound, NnError, ParamBuilder, ParamId, ParamStore, Result};
use crate::tensor::{Tape, Var};

/// Initial scale of the affine closing each residual branch.
const BRANCH_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub stem_stride: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for BackboneConfig {
    /// 3×56×56 in, 128×7×7 out.
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: 56,
            stem_stride: 1,
            channels: vec![16, 32, 64, 128],
            strides: vec![1, 2, 2, 2],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(NnError::Config("backbone needs one stride per stage".into()));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) || self.stem_stride == 0 || self.in_channels == 0 {
            return Err(NnError::Config("backbone dimensions must be positive".into()));
        }
        let mut s = self.input_size;
        for stride in std::iter::once(self.stem_stride).chain(self.strides.iter().copied()) {
            if s == 0 {
                break;
            }
            s = (s - 1) / stride + 1;
        }
        if self.input_size == 0 || s == 0 {
            return Err(NnError::Config(format!("input size {} too small", self.input_size)));
        }
        Ok(())
    }

    /// Spatial size after each stage (3×3 convs with padding 1).
    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut s = (self.input_size - 1) / self.stem_stride + 1;
        self.strides
            .iter()
            .map(|&st| {
                s = (s - 1) / st + 1;
                s
            })
            .collect()
    }

    pub fn output_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    pub fn output_size(&self) -> usize {
        *self.stage_sizes().last().expect("validated")
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    affine1: ChannelAffine,
    conv2: Conv2d,
    affine2: ChannelAffine,
    shortcut: Option<(Conv2d, ChannelAffine)>,
}

impl BasicBlock {
    fn new(pb: &mut ParamBuilder<'_>, inp: usize, out: usize, stride: usize) -> Result<Self> {
        let conv1 = Conv2d::new(&mut pb.scope("conv1"), inp, out, 3, stride, 1, false)?;
        let affine1 = ChannelAffine::new(&mut pb.scope("affine1"), out, 1.0)?;
        let conv2 = Conv2d::new(&mut pb.scope("conv2"), out, out, 3, 1, 1, false)?;
        let affine2 = ChannelAffine::new(&mut pb.scope("affine2"), out, BRANCH_SCALE)?;
        let shortcut = if stride != 1 || inp != out {
            Some((
                Conv2d::new(&mut pb.scope("down"), inp, out, 1, stride, 0, false)?,
                ChannelAffine::new(&mut pb.scope("down_affine"), out, 1.0)?,
            ))
        } else {
            None
        };
        Ok(Self { conv1, affine1, conv2, affine2, shortcut })
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, p, x)?;
        let y = self.affine1.forward(tape, p, y)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, p, y)?;
        let y = self.affine2.forward(tape, p, y)?;
        let skip = match &self.shortcut {
            Some((conv, affine)) => {
                let s = conv.forward(tape, p, x)?;
                affine.forward(tape, p, s)?
            }
            None => x,
        };
        let y = tape.add(y, skip)?;
        Ok(tape.relu(y))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.conv1.weight,
            self.affine1.scale,
            self.affine1.shift,
            self.conv2.weight,
            self.affine2.scale,
            self.affine2.shift,
        ];
        if let Some((c, a)) = &self.shortcut {
            ids.extend([c.weight, a.scale, a.shift]);
        }
        ids
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    stem: Conv2d,
    stem_affine: ChannelAffine,
    blocks: Vec<BasicBlock>,
}

/// Final feature map plus every stage output, all `[N, C, S, S]`.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub features: Var,
    pub stages: Vec<Var>,
}

impl Backbone {
    pub fn new(pb: &mut ParamBuilder<'_>, config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let c0 = config.channels[0];
        let stem = Conv2d::new(&mut pb.scope("stem"), config.in_channels, c0, 3, config.stem_stride, 1, false)?;
        let stem_affine = ChannelAffine::new(&mut pb.scope("stem_affine"), c0, 1.0)?;
        let mut blocks = Vec::new();
        let mut inp = c0;
        for (i, (&out, &stride)) in config.channels.iter().zip(&config.strides).enumerate() {
            blocks.push(BasicBlock::new(&mut pb.scope(&format!("block{}", i + 1)), inp, out, stride)?);
            inp = out;
        }
        Ok(Self { config, stem, stem_affine, blocks })
    }

    /// `[N, C, H, W]` images in `[0, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, images: Var) -> Result<BackboneOutput> {
        let s = tape.shape(images).to_vec();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.input_size || s[3] != c.input_size {
            return Err(NnError::Config(format!(
                "backbone expects [N, {}, {}, {}], got {s:?}",
                c.in_channels, c.input_size, c.input_size
            )));
        }
        let x = tape.add_scalar(images, -0.5);
        let x = tape.mul_scalar(x, 2.0);
        let x = self.stem.forward(tape, p, x)?;
        let x = self.stem_affine.forward(tape, p, x)?;
        let mut x = tape.relu(x);
        let mut stages = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(tape, p, x)?;
            stages.push(x);
        }
        Ok(BackboneOutput { features: x, stages })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.stem.weight, self.stem_affine.scale, self.stem_affine.shift];
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids
    }

    /// Zeroes every parameter of the last block.
    pub fn zero_final_block(&self, store: &mut ParamStore) {
        for id in self.blocks.last().expect("validated").param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
}
