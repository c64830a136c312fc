use super::init::Init;
use super::{Bound, ParamBuilder, ParamId, ParamStore, Result};
use crate::tensor::{Tape, Var};

/// Fully connected layer, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        let init = Init::FanInUniform { fan_in: in_dim };
        Self::with_init(pb, in_dim, out_dim, init, init)
    }

    pub fn with_init(
        pb: &mut ParamBuilder<'_>,
        in_dim: usize,
        out_dim: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: pb.create("w", &[out_dim, in_dim], weight)?,
            bias: pb.create("b", &[out_dim], bias)?,
            in_dim,
            out_dim,
        })
    }

    /// `[N, in] -> [N, out]`
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let wt = tape.transpose(p[self.weight])?;
        let y = tape.matmul(x, wt)?;
        Ok(tape.bias_add(y, p[self.bias])?)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

/// Square-kernel convolution, weight `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = pb.create("w", &[out_channels, in_channels, kernel, kernel], Init::KaimingUniform { fan_in })?;
        let bias = if bias { Some(pb.create("b", &[out_channels], Init::ZEROS)?) } else { None };
        Ok(Self { weight, bias, in_channels, out_channels, kernel, stride, padding })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let bias = self.bias.map(|b| p[b]);
        Ok(tape.conv2d(x, p[self.weight], bias, self.stride, self.padding)?)
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

/// Learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct ChannelAffine {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl ChannelAffine {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize, initial_scale: f64) -> Result<Self> {
        Ok(Self {
            scale: pb.create("scale", &[channels], Init::Const(initial_scale))?,
            shift: pb.create("shift", &[channels], Init::ZEROS)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.scale_channels(x, p[self.scale])?;
        Ok(tape.bias_add(y, p[self.shift])?)
    }
}
