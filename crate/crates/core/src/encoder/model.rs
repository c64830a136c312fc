use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ae::AeDecoder;
use super::NUM_PARTS;
use crate::nn::init::Init;
use crate::nn::{
    Backbone, BackboneConfig, Bound, Conv2d, Linear, LstmStack, NnError, ParamBuilder, ParamId, ParamStore, Result,
    LEAKY_SLOPE,
};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Channels after the 1×1 reducer.
    pub reduced_channels: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub seq_len: usize,
    pub proj_dim: usize,
    /// Feed embedded ground-truth gaze into both LSTMs.
    pub gaze_conditioned: bool,
    pub gaze_embed: usize,
    /// Build the reconstruction decoder.
    pub ae_decoder: bool,
    pub ae_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            reduced_channels: 16,
            hidden: 128,
            encoder_layers: 3,
            decoder_layers: 3,
            seq_len: 5,
            proj_dim: 32,
            gaze_conditioned: false,
            gaze_embed: 128,
            ae_decoder: false,
            ae_channels: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let positive = [
            self.reduced_channels,
            self.hidden,
            self.encoder_layers,
            self.decoder_layers,
            self.seq_len,
            self.proj_dim,
            self.gaze_embed,
            self.ae_channels,
        ];
        if positive.contains(&0) {
            return Err(NnError::Config("model dimensions must be positive".into()));
        }
        if self.ae_decoder {
            AeDecoder::upsample_stages(&self.backbone)?;
        }
        Ok(())
    }

    /// Flattened reducer output, the per-step visual input of the encoder LSTM.
    pub fn lstm_input(&self) -> usize {
        let s = self.backbone.output_size();
        self.reduced_channels * s * s
    }
}

#[derive(Clone, Debug)]
struct GazeEmbedder {
    l1: Linear,
    l2: Linear,
}

/// Parameter layout: backbone and projection come first so that a store
/// holding only the first [`InteractionModel::visual_len`] parameters is a
/// valid key encoder for the same ids.
#[derive(Clone, Debug)]
pub struct InteractionModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub projection: Linear,
    visual_len: usize,
    reducer: Conv2d,
    encoder: LstmStack,
    decoder: LstmStack,
    decoder_token: ParamId,
    gaze_head: Linear,
    movement_head: Linear,
    gaze_embedder: Option<GazeEmbedder>,
    pub ae: Option<AeDecoder>,
}

#[derive(Clone, Copy, Debug)]
pub struct FrameEncoding {
    /// Backbone output `[N, F, S, S]`.
    pub features: Var,
    /// Reducer output `[N, F′, S, S]`.
    pub spatial: Var,
    /// Unit-norm `[N, D]`.
    pub contrastive: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct SequenceOutput {
    /// `[N, k, 2]` normalized image coordinates.
    pub gaze: Var,
    /// `[N, k, 6]` logits.
    pub movement: Var,
}

impl InteractionModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut pb = ParamBuilder::new(&mut store, rng);
        let backbone = Backbone::new(&mut pb.scope("backbone"), config.backbone.clone())?;
        let f = config.backbone.output_channels();
        let projection = Linear::new(&mut pb.scope("proj"), f, config.proj_dim)?;
        let visual_len = pb.len();
        let reducer = Conv2d::new(&mut pb.scope("reducer"), f, config.reduced_channels, 1, 1, 0, true)?;
        let gaze_extra = if config.gaze_conditioned { config.gaze_embed } else { 0 };
        let encoder = LstmStack::new(
            &mut pb.scope("encoder"),
            config.lstm_input() + gaze_extra,
            config.hidden,
            config.encoder_layers,
        )?;
        let decoder =
            LstmStack::new(&mut pb.scope("decoder"), config.hidden + gaze_extra, config.hidden, config.decoder_layers)?;
        let decoder_token = pb.create(
            "decoder.token",
            &[1, config.hidden],
            Init::Uniform { bound: 1.0 / (config.hidden as f64).sqrt() },
        )?;
        let gaze_head = Linear::new(&mut pb.scope("gaze_head"), config.hidden, 2)?;
        let movement_head = Linear::new(&mut pb.scope("movement_head"), config.hidden, NUM_PARTS)?;
        let gaze_embedder = if config.gaze_conditioned {
            let mut s = pb.scope("gaze_embed");
            Some(GazeEmbedder {
                l1: Linear::new(&mut s.scope("l1"), 2, config.gaze_embed)?,
                l2: Linear::new(&mut s.scope("l2"), config.gaze_embed, config.gaze_embed)?,
            })
        } else {
            None
        };
        let ae = if config.ae_decoder {
            Some(AeDecoder::new(&mut pb.scope("ae"), &config.backbone, config.ae_channels)?)
        } else {
            None
        };
        let model = Self {
            config,
            backbone,
            projection,
            visual_len,
            reducer,
            encoder,
            decoder,
            decoder_token,
            gaze_head,
            movement_head,
            gaze_embedder,
            ae,
        };
        Ok((model, store))
    }

    /// Number of leading parameters that belong to backbone and projection.
    pub fn visual_len(&self) -> usize {
        self.visual_len
    }

    pub fn visual_ids(&self) -> Vec<ParamId> {
        (0..self.visual_len).map(ParamId).collect()
    }

    pub fn backbone_ids(&self) -> Vec<ParamId> {
        self.backbone.param_ids()
    }

    pub fn head_ids(&self) -> Vec<ParamId> {
        vec![self.gaze_head.weight, self.gaze_head.bias, self.movement_head.weight, self.movement_head.bias]
    }

    /// Zeroes the gaze and movement heads.
    pub fn zero_heads(&self, store: &mut ParamStore) {
        self.gaze_head.zero(store);
        self.movement_head.zero(store);
    }

    /// Pooled, projected, L2-normalized embedding of backbone features.
    pub fn project(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(features)?;
        let z = self.projection.forward(tape, p, pooled)?;
        Ok(tape.l2_normalize(z))
    }

    pub fn encode_frame(&self, tape: &mut Tape, p: &Bound, images: Var) -> Result<FrameEncoding> {
        let features = self.backbone.forward(tape, p, images)?.features;
        let spatial = self.reduce(tape, p, features)?;
        let contrastive = self.project(tape, p, features)?;
        Ok(FrameEncoding { features, spatial, contrastive })
    }

    fn reduce(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
        let r = self.reducer.forward(tape, p, features)?;
        Ok(tape.leaky_relu(r, LEAKY_SLOPE))
    }

    fn embed_gaze(&self, tape: &mut Tape, p: &Bound, gaze: &Tensor, batch: usize) -> Result<Vec<Var>> {
        let emb = self.gaze_embedder.as_ref().expect("gaze-conditioned model");
        let k = self.config.seq_len;
        if gaze.shape() != [batch, k, 2] {
            return Err(NnError::Config(format!("gaze input must be [{batch}, {k}, 2], got {:?}", gaze.shape())));
        }
        let g = tape.constant(gaze.clone());
        let mut out = Vec::with_capacity(k);
        for t in 0..k {
            let gt = tape.slice(g, 1, t, t + 1)?;
            let gt = tape.reshape(gt, &[batch, 2])?;
            let e = emb.l1.forward(tape, p, gt)?;
            let e = tape.leaky_relu(e, LEAKY_SLOPE);
            let e = emb.l2.forward(tape, p, e)?;
            out.push(tape.leaky_relu(e, LEAKY_SLOPE));
        }
        Ok(out)
    }

    /// Sequence heads from backbone features of all frames, laid out
    /// `[N·k, F, S, S]` with the frame index varying fastest.
    pub fn sequence_from_features(
        &self,
        tape: &mut Tape,
        p: &Bound,
        features: Var,
        batch: usize,
        gaze_input: Option<&Tensor>,
    ) -> Result<SequenceOutput> {
        let k = self.config.seq_len;
        match (self.config.gaze_conditioned, gaze_input.is_some()) {
            (false, true) => return Err(NnError::Config("gaze input given to a model without a gaze embedder".into())),
            (true, false) => return Err(NnError::Config("gaze-conditioned model requires gaze input".into())),
            _ => {}
        }
        let fs = tape.shape(features).to_vec();
        if fs.first() != Some(&(batch * k)) {
            return Err(NnError::Config(format!("expected features for {batch}×{k} frames, got shape {fs:?}")));
        }
        let d = self.config.lstm_input();
        let reduced = self.reduce(tape, p, features)?;
        let flat = tape.reshape(reduced, &[batch, k, d])?;
        let gaze_emb = match gaze_input {
            Some(g) => Some(self.embed_gaze(tape, p, g, batch)?),
            None => None,
        };
        let mut inputs = Vec::with_capacity(k);
        for t in 0..k {
            let x = tape.slice(flat, 1, t, t + 1)?;
            let x = tape.reshape(x, &[batch, d])?;
            inputs.push(match &gaze_emb {
                Some(e) => tape.concat(&[x, e[t]], 1)?,
                None => x,
            });
        }
        let init = self.encoder.zero_state(tape, batch);
        let (_, enc_state) = self.encoder.forward(tape, p, &inputs, init)?;

        let ones = tape.constant(Tensor::ones([batch, 1]));
        let token = tape.matmul(ones, p[self.decoder_token])?;
        let dec_inputs = (0..k)
            .map(|t| match &gaze_emb {
                Some(e) => tape.concat(&[token, e[t]], 1).map_err(NnError::from),
                None => Ok(token),
            })
            .collect::<Result<Vec<_>>>()?;
        let (outs, _) = self.decoder.forward(tape, p, &dec_inputs, enc_state)?;

        let mut gaze = Vec::with_capacity(k);
        let mut movement = Vec::with_capacity(k);
        for h in outs {
            let g = self.gaze_head.forward(tape, p, h)?;
            gaze.push(tape.reshape(g, &[batch, 1, 2])?);
            let m = self.movement_head.forward(tape, p, h)?;
            movement.push(tape.reshape(m, &[batch, 1, NUM_PARTS])?);
        }
        Ok(SequenceOutput { gaze: tape.concat(&gaze, 1)?, movement: tape.concat(&movement, 1)? })
    }

    /// `frames` is `[N, k, C, H, W]`; `gaze_input`, when given, `[N, k, 2]`.
    pub fn predict_sequence(
        &self,
        tape: &mut Tape,
        p: &Bound,
        frames: Var,
        gaze_input: Option<&Tensor>,
    ) -> Result<SequenceOutput> {
        let s = tape.shape(frames).to_vec();
        let k = self.config.seq_len;
        if s.len() != 5 || s[1] != k {
            return Err(NnError::Config(format!("expected [N, {k}, C, H, W] frames, got {s:?}")));
        }
        let flat = tape.reshape(frames, &[s[0] * k, s[2], s[3], s[4]])?;
        let features = self.backbone.forward(tape, p, flat)?.features;
        self.sequence_from_features(tape, p, features, s[0], gaze_input)
    }

    pub fn reconstruct(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
        match &self.ae {
            Some(ae) => ae.forward(tape, p, features),
            None => Err(NnError::Config("model was built without a reconstruction decoder".into())),
        }
    }

    /// A fresh key store: a copy of the backbone and projection parameters.
    pub fn key_store(&self, store: &ParamStore) -> Result<ParamStore> {
        let mut key = ParamStore::new();
        for id in self.visual_ids() {
            key.add(store.name(id), store.get(id).clone())?;
        }
        Ok(key)
    }
}
