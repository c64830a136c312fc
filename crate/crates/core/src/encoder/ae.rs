use crate::nn::{BackboneConfig, Bound, Conv2d, NnError, ParamBuilder, ParamId, ParamStore, Result, LEAKY_SLOPE};
use crate::tensor::{Tape, Var};

/// Five 3×3 convolutions mapping backbone features back to an image. The
/// first layers each double the resolution with a pixel shuffle.
#[derive(Clone, Debug)]
pub struct AeDecoder {
    layers: Vec<Conv2d>,
    upsample: usize,
    out_channels: usize,
    out_size: usize,
}

pub const AE_LAYERS: usize = 5;

impl AeDecoder {
    /// Number of ×2 stages from the feature grid to the input resolution.
    pub fn upsample_stages(bb: &BackboneConfig) -> Result<usize> {
        let s = bb.output_size();
        let h = bb.input_size;
        let mut stages = 0;
        let mut size = s;
        while size < h {
            size *= 2;
            stages += 1;
        }
        if size != h || stages > AE_LAYERS {
            return Err(NnError::Config(format!(
                "reconstruction from {s}×{s} to {h}×{h} needs a power-of-two factor of at most 2^{AE_LAYERS}"
            )));
        }
        Ok(stages)
    }

    pub fn new(pb: &mut ParamBuilder<'_>, bb: &BackboneConfig, width: usize) -> Result<Self> {
        let upsample = Self::upsample_stages(bb)?;
        let mut layers = Vec::with_capacity(AE_LAYERS);
        let mut inp = bb.output_channels();
        for i in 0..AE_LAYERS {
            let last = i + 1 == AE_LAYERS;
            let base = if last { bb.in_channels } else { width };
            let out = if i < upsample { base * 4 } else { base };
            layers.push(Conv2d::new(&mut pb.scope(&format!("up{}", i + 1)), inp, out, 3, 1, 1, true)?);
            inp = base;
        }
        Ok(Self { layers, upsample, out_channels: bb.in_channels, out_size: bb.input_size })
    }

    /// `[N, F, S, S] -> [N, C, H, W]`, unbounded output.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
        let mut x = features;
        for (i, conv) in self.layers.iter().enumerate() {
            x = conv.forward(tape, p, x)?;
            if i < self.upsample {
                x = tape.pixel_shuffle(x, 2)?;
            }
            if i + 1 < self.layers.len() {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        let s = tape.shape(x);
        debug_assert_eq!(s[1..], [self.out_channels, self.out_size, self.out_size]);
        Ok(x)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|c| std::iter::once(c.weight).chain(c.bias)).collect()
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
}
