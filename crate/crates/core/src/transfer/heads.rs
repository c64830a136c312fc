use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TaskKind, TransferError};
use crate::nn::{BackboneConfig, Bound, Conv2d, Linear, LstmStack, ParamBuilder, ParamStore, LEAKY_SLOPE};
use crate::tensor::{Tape, Tensor, Var};

/// Shapes a head must agree with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub input_size: usize,
    pub in_channels: usize,
    pub feature_channels: usize,
    pub feature_size: usize,
    pub stage_channels: Vec<usize>,
    pub stage_sizes: Vec<usize>,
    pub seq_len: usize,
}

impl Geometry {
    pub fn of(bb: &BackboneConfig, seq_len: usize) -> Self {
        Self {
            input_size: bb.input_size,
            in_channels: bb.in_channels,
            feature_channels: bb.output_channels(),
            feature_size: bb.output_size(),
            stage_channels: bb.channels.clone(),
            stage_sizes: bb.stage_sizes(),
            seq_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Output channels of the 1×1 convolution over backbone features.
    pub reduce_channels: usize,
    pub hidden: usize,
    /// LSTM width of the action head.
    pub action_hidden: usize,
    /// Channels of the box-mask encoder output.
    pub mask_channels: usize,
    /// Channels of the dynamics fusion convolutions.
    pub fusion_channels: usize,
    /// Width of every pyramid level in the dense decoder.
    pub pyramid_channels: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            reduce_channels: 32,
            hidden: 128,
            action_hidden: 128,
            mask_channels: 64,
            fusion_channels: 64,
            pyramid_channels: 32,
        }
    }
}

/// Inputs a head consumes, all tape constants.
#[derive(Clone, Copy, Debug)]
pub enum HeadInput<'a> {
    /// Final features `[N, F, S, S]`.
    Features(Var),
    /// Final features of every frame, `[N·k, F, S, S]` with frames fastest.
    Sequence(Var, usize),
    /// Features and a `[N, 1, H, W]` box mask.
    Masked(Var, Var),
    /// Every stage output, shallow to deep.
    Stages(&'a [Var]),
}

pub const DENSE_UPCONVS: usize = 5;

#[derive(Clone, Debug)]
struct DenseDecoder {
    laterals: Vec<Conv2d>,
    upconvs: Vec<Conv2d>,
    /// Whether up-convolution `i` doubles the resolution.
    upsample: Vec<bool>,
    /// Stages merged after up-convolution `i`; entry 0 is merged before any.
    merge_after: Vec<Vec<usize>>,
    out: Conv2d,
}

#[derive(Clone, Debug)]
enum HeadNet {
    Scene { conv: Conv2d, fc1: Linear, fc2: Linear },
    Action { conv: Conv2d, lstm: LstmStack, fc1: Linear, fc2: Linear },
    Dynamics { mask1: Conv2d, mask2: Conv2d, conv1: Conv2d, conv2: Conv2d, fc: Linear },
    Dense(DenseDecoder),
}

/// A task head with its own parameters; the backbone is never bound.
#[derive(Clone, Debug)]
pub struct Head {
    pub kind: TaskKind,
    pub geometry: Geometry,
    net: HeadNet,
}

fn leaky(tape: &mut Tape, x: Var) -> Var {
    tape.leaky_relu(x, LEAKY_SLOPE)
}

/// Stride pair whose product is `factor`, for the two-layer mask encoder.
fn mask_strides(input: usize, output: usize) -> Result<(usize, usize)> {
    if output == 0 || !input.is_multiple_of(output) || !(input / output).is_power_of_two() {
        return Err(TransferError::Geometry(format!("mask encoder cannot map {input}px to a {output}px grid")));
    }
    let log = (input / output).trailing_zeros();
    let first = 1 << log.div_ceil(2);
    Ok((first, (input / output) / first))
}

impl Head {
    pub fn new(kind: TaskKind, geometry: Geometry, cfg: &HeadConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let g = &geometry;
        let (f, s) = (g.feature_channels, g.feature_size);
        let net = match kind {
            TaskKind::Scene => HeadNet::Scene {
                conv: Conv2d::new(&mut pb.scope("conv"), f, cfg.reduce_channels, 1, 1, 0, true)?,
                fc1: Linear::new(&mut pb.scope("fc1"), cfg.reduce_channels * s * s, cfg.hidden)?,
                fc2: Linear::new(&mut pb.scope("fc2"), cfg.hidden, kind.classes().expect("classification"))?,
            },
            TaskKind::Action => HeadNet::Action {
                conv: Conv2d::new(&mut pb.scope("conv"), f, cfg.reduce_channels, 1, 1, 0, true)?,
                lstm: LstmStack::new(&mut pb.scope("lstm"), cfg.reduce_channels * s * s, cfg.action_hidden, 1)?,
                fc1: Linear::new(&mut pb.scope("fc1"), cfg.action_hidden, cfg.hidden)?,
                fc2: Linear::new(&mut pb.scope("fc2"), cfg.hidden, kind.classes().expect("classification"))?,
            },
            TaskKind::Dynamics => {
                let (s1, s2) = mask_strides(g.input_size, s)?;
                let half = cfg.mask_channels.div_ceil(2);
                let mask1 = Conv2d::new(&mut pb.scope("mask1"), 1, half, 3, s1, 1, true)?;
                let mask2 = Conv2d::new(&mut pb.scope("mask2"), half, cfg.mask_channels, 3, s2, 1, true)?;
                if mask2.output_size(mask1.output_size(g.input_size)) != s {
                    return Err(TransferError::Geometry(format!("mask encoder does not reach {s}×{s}")));
                }
                HeadNet::Dynamics {
                    mask1,
                    mask2,
                    conv1: Conv2d::new(
                        &mut pb.scope("conv1"),
                        f + cfg.mask_channels,
                        cfg.fusion_channels,
                        3,
                        1,
                        1,
                        true,
                    )?,
                    conv2: Conv2d::new(
                        &mut pb.scope("conv2"),
                        cfg.fusion_channels,
                        cfg.fusion_channels,
                        3,
                        1,
                        1,
                        true,
                    )?,
                    fc: Linear::new(&mut pb.scope("fc"), cfg.fusion_channels, kind.classes().expect("classification"))?,
                }
            }
            TaskKind::Walkable | TaskKind::Depth => HeadNet::Dense(Self::dense(&mut pb, g, cfg)?),
        };
        Ok((Self { kind, geometry, net }, store))
    }

    fn dense(pb: &mut ParamBuilder<'_>, g: &Geometry, cfg: &HeadConfig) -> Result<DenseDecoder> {
        let p = cfg.pyramid_channels;
        let deepest = *g.stage_sizes.last().ok_or_else(|| TransferError::Geometry("backbone has no stages".into()))?;
        let mut merged = vec![false; g.stage_sizes.len()];
        let merge_at = |size: usize, merged: &mut Vec<bool>| -> Vec<usize> {
            let mut out = Vec::new();
            for i in (0..g.stage_sizes.len()).rev() {
                if !merged[i] && g.stage_sizes[i] == size {
                    merged[i] = true;
                    out.push(i);
                }
            }
            out
        };
        let mut merge_after = vec![merge_at(deepest, &mut merged)];
        let mut upsample = Vec::with_capacity(DENSE_UPCONVS);
        let mut size = deepest;
        for _ in 0..DENSE_UPCONVS {
            let up = size < g.input_size;
            if up {
                size *= 2;
            }
            upsample.push(up);
            merge_after.push(merge_at(size, &mut merged));
        }
        if size != g.input_size || merged.contains(&false) {
            return Err(TransferError::Geometry(format!(
                "stage sizes {:?} cannot be decoded to {}px with {DENSE_UPCONVS} ×2 up-convolutions",
                g.stage_sizes, g.input_size
            )));
        }
        let laterals = g
            .stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(&mut pb.scope(&format!("lateral{i}")), c, p, 1, 1, 0, true))
            .collect::<crate::nn::Result<Vec<_>>>()?;
        let upconvs = upsample
            .iter()
            .enumerate()
            .map(|(i, &up)| {
                let out = if up { 4 * p } else { p };
                Conv2d::new(&mut pb.scope(&format!("up{}", i + 1)), p, out, 3, 1, 1, true)
            })
            .collect::<crate::nn::Result<Vec<_>>>()?;
        let out = Conv2d::new(&mut pb.scope("out"), p, 1, 1, 1, 0, true)?;
        Ok(DenseDecoder { laterals, upconvs, upsample, merge_after, out })
    }

    /// Class logits `[N, C]` or a dense map `[N, 1, H, W]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, input: HeadInput<'_>) -> Result<Var> {
        let s = self.geometry.feature_size;
        match (&self.net, input) {
            (HeadNet::Scene { conv, fc1, fc2 }, HeadInput::Features(x)) => {
                let n = tape.shape(x)[0];
                let y = conv.forward(tape, p, x)?;
                let y = leaky(tape, y);
                let y = tape.reshape(y, &[n, conv.out_channels * s * s])?;
                let y = fc1.forward(tape, p, y)?;
                let y = leaky(tape, y);
                Ok(fc2.forward(tape, p, y)?)
            }
            (HeadNet::Action { conv, lstm, fc1, fc2 }, HeadInput::Sequence(x, batch)) => {
                let k = self.geometry.seq_len;
                let y = conv.forward(tape, p, x)?;
                let y = leaky(tape, y);
                let d = conv.out_channels * s * s;
                let y = tape.reshape(y, &[batch, k, d])?;
                let mut steps = Vec::with_capacity(k);
                for t in 0..k {
                    let st = tape.slice(y, 1, t, t + 1)?;
                    steps.push(tape.reshape(st, &[batch, d])?);
                }
                let init = lstm.zero_state(tape, batch);
                let (_, state) = lstm.forward(tape, p, &steps, init)?;
                let h = state.last().expect("one layer").h;
                let y = fc1.forward(tape, p, h)?;
                let y = leaky(tape, y);
                Ok(fc2.forward(tape, p, y)?)
            }
            (HeadNet::Dynamics { mask1, mask2, conv1, conv2, fc }, HeadInput::Masked(x, mask)) => {
                let m = mask1.forward(tape, p, mask)?;
                let m = leaky(tape, m);
                let m = mask2.forward(tape, p, m)?;
                let m = leaky(tape, m);
                let y = tape.concat(&[x, m], 1)?;
                let y = conv1.forward(tape, p, y)?;
                let y = leaky(tape, y);
                let y = conv2.forward(tape, p, y)?;
                let y = leaky(tape, y);
                let y = tape.global_avg_pool(y)?;
                Ok(fc.forward(tape, p, y)?)
            }
            (HeadNet::Dense(d), HeadInput::Stages(stages)) => {
                if stages.len() != d.laterals.len() {
                    return Err(TransferError::Geometry(format!(
                        "dense head needs {} stage outputs, got {}",
                        d.laterals.len(),
                        stages.len()
                    )));
                }
                let mut x: Option<Var> = None;
                let merge = |tape: &mut Tape, x: Option<Var>, ids: &[usize]| -> Result<Option<Var>> {
                    let mut x = x;
                    for &i in ids {
                        let l = d.laterals[i].forward(tape, p, stages[i])?;
                        x = Some(match x {
                            Some(v) => tape.add(v, l)?,
                            None => l,
                        });
                    }
                    Ok(x)
                };
                x = merge(tape, x, &d.merge_after[0])?;
                for (i, conv) in d.upconvs.iter().enumerate() {
                    let mut y = conv.forward(tape, p, x.expect("deepest stage merged first"))?;
                    if d.upsample[i] {
                        y = tape.pixel_shuffle(y, 2)?;
                    }
                    y = leaky(tape, y);
                    x = merge(tape, Some(y), &d.merge_after[i + 1])?;
                }
                Ok(d.out.forward(tape, p, x.expect("decoded"))?)
            }
            _ => Err(TransferError::Geometry(format!("wrong input kind for the {} head", self.kind.name()))),
        }
    }
}

/// Balanced cross-entropy helper: mean of `logsumexp(z) − z[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
        return Err(TransferError::Geometry(format!("logits {s:?} for {} labels", labels.len())));
    }
    let onehot = Tensor::from_fn(s.clone(), |i| if labels[i / s[1]] == i % s[1] { 1.0 } else { 0.0 });
    let oh = tape.constant(onehot);
    let picked = tape.mul(logits, oh)?;
    let picked = tape.sum_axis(picked, 1)?;
    let lse = tape.log_sum_exp(logits);
    let d = tape.sub(lse, picked)?;
    Ok(tape.mean(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn geometry() -> Geometry {
        let bb = BackboneConfig {
            in_channels: 3,
            input_size: 16,
            stem_stride: 1,
            channels: vec![4, 6, 8],
            strides: vec![1, 2, 2],
        };
        Geometry::of(&bb, 3)
    }

    fn small() -> HeadConfig {
        HeadConfig {
            reduce_channels: 3,
            hidden: 5,
            action_hidden: 4,
            mask_channels: 6,
            fusion_channels: 5,
            pyramid_channels: 4,
        }
    }

    fn run(kind: TaskKind, n: usize) -> Vec<usize> {
        let g = geometry();
        let (head, store) = Head::new(kind, g.clone(), &small(), 1).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, true);
        let feat = |tape: &mut Tape, n: usize| tape.constant(Tensor::full([n, 8, 4, 4], 0.3));
        let out = match kind {
            TaskKind::Scene => {
                let x = feat(&mut tape, n);
                head.forward(&mut tape, &p, HeadInput::Features(x))
            }
            TaskKind::Action => {
                let x = feat(&mut tape, n * 3);
                head.forward(&mut tape, &p, HeadInput::Sequence(x, n))
            }
            TaskKind::Dynamics => {
                let x = feat(&mut tape, n);
                let m = tape.constant(Tensor::ones([n, 1, 16, 16]));
                head.forward(&mut tape, &p, HeadInput::Masked(x, m))
            }
            _ => {
                let stages: Vec<Var> = g
                    .stage_channels
                    .iter()
                    .zip(&g.stage_sizes)
                    .map(|(&c, &s)| tape.constant(Tensor::full([n, c, s, s], 0.1)))
                    .collect();
                head.forward(&mut tape, &p, HeadInput::Stages(&stages))
            }
        }
        .unwrap();
        tape.shape(out).to_vec()
    }

    #[test]
    fn output_shapes() {
        assert_eq!(run(TaskKind::Scene, 2), vec![2, 3]);
        assert_eq!(run(TaskKind::Action, 2), vec![2, 4]);
        assert_eq!(run(TaskKind::Dynamics, 2), vec![2, 6]);
        assert_eq!(run(TaskKind::Walkable, 2), vec![2, 1, 16, 16]);
        assert_eq!(run(TaskKind::Depth, 1), vec![1, 1, 16, 16]);
    }

    #[test]
    fn desk_mask_encoder_reaches_seven() {
        let g = Geometry::of(&BackboneConfig::default(), 5);
        assert_eq!(mask_strides(56, 7).unwrap(), (4, 2));
        let (_, store) = Head::new(TaskKind::Dynamics, g, &HeadConfig::default(), 0).unwrap();
        let w = store.by_name("mask2.w").unwrap();
        assert_eq!(w.shape()[0], 64);
    }

    #[test]
    fn incompatible_geometry_errors() {
        let mut g = geometry();
        g.input_size = 20;
        assert!(Head::new(TaskKind::Dynamics, g.clone(), &small(), 0).is_err());
        assert!(Head::new(TaskKind::Depth, g, &small(), 0).is_err());
    }

    #[test]
    fn parameter_count_ignores_backbone_values() {
        let a = Head::new(TaskKind::Scene, geometry(), &small(), 3).unwrap().1;
        let b = Head::new(TaskKind::Scene, geometry(), &small(), 4).unwrap().1;
        assert_eq!(a.num_values(), b.num_values());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros([3, 4]));
        let l = cross_entropy(&mut tape, z, &[0, 1, 3]).unwrap();
        assert!((tape.item(l) - 4f64.ln()).abs() < 1e-12);
    }
}
