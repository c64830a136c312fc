use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{EpochLosses, TrainReport};
use super::{Result, TrainConfig, TrainError};
use crate::data::{derive_seed, Batch, Dataset, Sampler};
use crate::encoder::{DualEncoderState, InteractionModel, MemoryBank};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{clip_global_norm, Grads, Optimizer, ParamStore};
use crate::objectives::{ae_loss, gaze_loss, infonce_loss, movement_loss, total_loss, LossParts, VisualMode};
use crate::tensor::{Tape, Tensor};

/// `meta.kind` of training checkpoints.
pub const CHECKPOINT_KIND: &str = "ego-interact/train";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub attention: f64,
    pub movement: f64,
    pub visual: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Gradients and bank keys of one step, before anything is applied.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub losses: StepLosses,
    pub grads: Grads,
    pub keys: Option<Tensor>,
    pub no_valid_gaze: bool,
}

/// What was known about the batch when a loss went non-finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonFiniteDiagnostic {
    pub step: u64,
    pub epoch: u64,
    pub indices: Vec<usize>,
    pub attention: f64,
    pub movement: f64,
    pub visual: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub frames_finite: bool,
    pub frames_range: (f64, f64),
    pub gaze_valid: usize,
    pub movement_supervised: usize,
}

impl NonFiniteDiagnostic {
    pub fn summary(&self) -> String {
        format!(
            "epoch {} sequences {:?} total={} attn={} move={} vis={} grad_norm={}",
            self.epoch, self.indices, self.total, self.attention, self.movement, self.visual, self.grad_norm
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Accum {
    steps: u64,
    total: f64,
    attention: f64,
    movement: f64,
    visual: f64,
}

impl Accum {
    fn add(&mut self, l: &StepLosses) {
        self.steps += 1;
        self.total += l.total;
        self.attention += l.attention;
        self.movement += l.movement;
        self.visual += l.visual;
    }

    fn mean(&self, epoch: usize) -> EpochLosses {
        let n = self.steps.max(1) as f64;
        EpochLosses {
            epoch,
            total: self.total / n,
            attention: self.attention / n,
            movement: self.movement / n,
            visual: self.visual / n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetShape {
    sequences: usize,
    image_size: usize,
    seq_len: usize,
}

impl DatasetShape {
    fn of(ds: &Dataset) -> Self {
        Self { sequences: ds.len(), image_size: ds.image_size, seq_len: ds.seq_len }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: TrainConfig,
    dataset: DatasetShape,
    step: u64,
    optimizer_step: u64,
    bank_head: Option<usize>,
    history: Vec<EpochLosses>,
    accum: Accum,
    warnings: Vec<String>,
}

/// Owns the model, optimizer, key encoder and bank for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: InteractionModel,
    store: ParamStore,
    dual: Option<DualEncoderState>,
    optimizer: Optimizer,
    sampler: Sampler,
    masked: Vec<usize>,
    dataset: DatasetShape,
    step: u64,
    history: Vec<EpochLosses>,
    accum: Accum,
    warnings: Vec<String>,
}

impl Trainer {
    pub fn new(config: TrainConfig, ds: &Dataset) -> Result<Self> {
        config.validate()?;
        let shape = DatasetShape::of(ds);
        let mc = config.resolved_model();
        if mc.seq_len != ds.seq_len || mc.backbone.input_size != ds.image_size {
            return Err(TrainError::Config(format!(
                "model expects {} frames of {}px, dataset has {} frames of {}px",
                mc.seq_len, mc.backbone.input_size, ds.seq_len, ds.image_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (model, store) = InteractionModel::new(mc, &mut rng)?;
        let dual = if config.visual == VisualMode::Infonce {
            Some(DualEncoderState {
                key: model.key_store(&store)?,
                bank: MemoryBank::new(config.bank_size, model.config.proj_dim, derive_seed(config.seed, 0xba4c, 0)),
                tau: config.tau,
                momentum: config.momentum,
            })
        } else {
            None
        };
        let optimizer = Optimizer::new(config.algorithm(), config.learning_rate());
        let sampler = Sampler::new(ds.len(), config.batch_size, config.data_seed)?;
        let masked = config.masked_part_indices()?;
        Ok(Self {
            config,
            model,
            store,
            dual,
            optimizer,
            sampler,
            masked,
            dataset: shape,
            step: 0,
            history: Vec::new(),
            accum: Accum::default(),
            warnings: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &InteractionModel {
        &self.model
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dual(&self) -> Option<&DualEncoderState> {
        self.dual.as_ref()
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.sampler.batches_per_epoch() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.epochs as u64
    }

    pub fn history(&self) -> &[EpochLosses] {
        &self.history
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if DatasetShape::of(ds) != self.dataset {
            return Err(TrainError::Config(format!(
                "dataset {:?} differs from the one this run started with {:?}",
                DatasetShape::of(ds),
                self.dataset
            )));
        }
        Ok(())
    }

    /// The batch for the next step, with masked parts already cleared.
    pub fn next_batch(&self, ds: &Dataset) -> Result<Batch> {
        self.check_dataset(ds)?;
        let bpe = self.steps_per_epoch();
        let epoch = self.step / bpe;
        let within = (self.step % bpe) as usize;
        let indices = self.sampler.batches(epoch).swap_remove(within);
        let mut batch = Batch::assemble(ds, &indices, &self.config.jitter, self.config.data_seed, self.step)?;
        batch.movement.mask_parts(&self.masked);
        Ok(batch)
    }

    /// Forward and backward pass for `batch` without touching any state.
    /// Parameters outside the active objective get exactly zero gradient.
    pub fn compute(&self, batch: &Batch) -> Result<StepResult> {
        let cfg = &self.config;
        let w = cfg.effective_weights();
        let model = &self.model;
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, true);
        let mut parts = LossParts::default();
        let mut no_valid_gaze = false;
        if w.alpha > 0.0 || w.beta > 0.0 {
            let frames = tape.constant(batch.frames.clone());
            let gaze_input = if model.config.gaze_conditioned {
                Some(Tensor::new([batch.len(), model.config.seq_len, 2], batch.gaze.clone())?)
            } else {
                None
            };
            let out = model.predict_sequence(&mut tape, &p, frames, gaze_input.as_ref())?;
            if w.alpha > 0.0 {
                let g = gaze_loss(&mut tape, out.gaze, &batch.gaze, &batch.gaze_valid, w.delta)?;
                no_valid_gaze = g.no_valid_frames;
                parts.attention = Some(g.value);
            }
            if w.beta > 0.0 {
                parts.movement = Some(movement_loss(&mut tape, out.movement, &batch.movement)?);
            }
        }
        let mut keys = None;
        match cfg.visual {
            VisualMode::Infonce => {
                let dual = self.dual.as_ref().expect("infonce runs own a key encoder");
                let k = {
                    let mut kt = Tape::new();
                    let kb = dual.key.bind(&mut kt, false);
                    let v2 = kt.constant(batch.view2.clone());
                    let f = model.backbone.forward(&mut kt, &kb, v2)?.features;
                    let z = model.project(&mut kt, &kb, f)?;
                    kt.value(z).clone()
                };
                let v1 = tape.constant(batch.view1.clone());
                let f = model.backbone.forward(&mut tape, &p, v1)?.features;
                let q = model.project(&mut tape, &p, f)?;
                let kv = tape.constant(k.clone());
                let bank = dual.bank.as_tensor();
                let l = infonce_loss(&mut tape, q, kv, bank.as_ref(), dual.tau, cfg.denominator)?;
                parts.visual = Some(l.value);
                keys = Some(k);
            }
            VisualMode::Ae => {
                let v1 = tape.constant(batch.view1.clone());
                let f = model.backbone.forward(&mut tape, &p, v1)?.features;
                let recon = model.reconstruct(&mut tape, &p, f)?;
                parts.visual = Some(ae_loss(&mut tape, recon, &batch.view1, cfg.ae_normalize)?);
            }
            VisualMode::None => {}
        }
        let tl = total_loss(&mut tape, parts, &w)?;
        let mut losses = StepLosses {
            total: tape.item(tl.total),
            attention: tl.attention,
            movement: tl.movement,
            visual: tl.visual,
            grad_norm: 0.0,
        };
        let finite = [losses.total, losses.attention, losses.movement, losses.visual].iter().all(|v| v.is_finite());
        if !finite {
            return Err(self.non_finite(batch, &losses));
        }
        tape.backward(tl.total)?;
        let mut grads = self.store.collect_grads(&tape, &p);
        for (id, g) in self.store.ids().zip(grads.values.iter_mut()) {
            if g.is_none() {
                *g = Some(vec![0.0; self.store.get(id).numel()]);
            }
        }
        losses.grad_norm = grads.global_norm();
        if !losses.grad_norm.is_finite() {
            return Err(self.non_finite(batch, &losses));
        }
        Ok(StepResult { losses, grads, keys, no_valid_gaze })
    }

    fn non_finite(&self, batch: &Batch, l: &StepLosses) -> TrainError {
        let d = batch.frames.data();
        let range = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        TrainError::NonFinite(Box::new(NonFiniteDiagnostic {
            step: self.step,
            epoch: self.step / self.steps_per_epoch(),
            indices: batch.indices.clone(),
            attention: l.attention,
            movement: l.movement,
            visual: l.visual,
            total: l.total,
            grad_norm: l.grad_norm,
            frames_finite: batch.frames.is_finite(),
            frames_range: range,
            gaze_valid: batch.gaze_valid.iter().filter(|v| **v).count(),
            movement_supervised: batch.movement.mask.iter().filter(|v| **v).count(),
        }))
    }

    /// Clips and applies gradients, then updates the key encoder and pushes
    /// the step's keys (contrastive runs only).
    pub fn apply(&mut self, mut result: StepResult) -> Result<StepLosses> {
        if let Some(c) = self.config.clip_norm {
            clip_global_norm(&mut result.grads, c);
        }
        self.optimizer.step(&mut self.store, &result.grads)?;
        if let Some(dual) = self.dual.as_mut() {
            dual.update_key(&self.store)?;
            if let Some(k) = &result.keys {
                dual.bank.push(k)?;
            }
        }
        if result.no_valid_gaze && !self.warnings.iter().any(|w| w.starts_with("batches without valid gaze")) {
            self.warnings.push(format!("batches without valid gaze first seen at step {}", self.step));
        }
        self.accum.add(&result.losses);
        self.step += 1;
        if self.step.is_multiple_of(self.steps_per_epoch()) {
            let epoch = (self.step / self.steps_per_epoch()) as usize;
            self.history.push(self.accum.mean(epoch));
            self.accum = Accum::default();
        }
        Ok(result.losses)
    }

    pub fn step(&mut self, ds: &Dataset) -> Result<StepLosses> {
        let batch = self.next_batch(ds)?;
        let r = self.compute(&batch)?;
        self.apply(r)
    }

    /// Trains until the configured epoch count, calling `on_epoch` after each
    /// completed epoch.
    pub fn run(&mut self, ds: &Dataset, mut on_epoch: impl FnMut(&EpochLosses)) -> Result<TrainReport> {
        let start = Instant::now();
        while self.step < self.total_steps() {
            self.step(ds)?;
            if self.step.is_multiple_of(self.steps_per_epoch()) {
                on_epoch(self.history.last().expect("epoch just closed"));
            }
        }
        Ok(self.report(start.elapsed().as_secs_f64()))
    }

    pub fn report(&self, wall_seconds: f64) -> TrainReport {
        TrainReport {
            config: self.config.clone(),
            epochs: self.history.clone(),
            steps: self.step,
            wall_seconds,
            checkpoint: None,
            warnings: self.warnings.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            dataset: self.dataset,
            step: self.step,
            optimizer_step: self.optimizer.state.step,
            bank_head: self.dual.as_ref().map(|d| d.bank.head()),
            history: self.history.clone(),
            accum: self.accum,
            warnings: self.warnings.clone(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(&meta).expect("meta serializes"));
        for (name, t) in self.store.iter() {
            ck.push(format!("param/{name}"), t.clone());
        }
        if !self.optimizer.state.m.is_empty() {
            // Moments are indexed in parameter creation order.
            for (i, (name, t)) in self.store.iter().enumerate() {
                let shape = t.shape().to_vec();
                let m = Tensor::new(shape.clone(), self.optimizer.state.m[i].clone());
                let v = Tensor::new(shape, self.optimizer.state.v[i].clone());
                ck.push(format!("adam_m/{name}"), m.expect("moment matches parameter"));
                ck.push(format!("adam_v/{name}"), v.expect("moment matches parameter"));
            }
        }
        if let Some(d) = &self.dual {
            for (name, t) in d.key.iter() {
                ck.push(format!("key/{name}"), t.clone());
            }
            if let Some(rows) = d.bank.as_tensor() {
                ck.push("bank", rows);
            }
        }
        ck
    }

    /// Restores a run from its checkpoint using the stored configuration.
    pub fn resume(ck: &Checkpoint, ds: &Dataset) -> Result<Self> {
        let meta = parse_meta(ck)?;
        Self::restore(ck, meta, ds)
    }

    /// Restores a run under `config`, which may only differ from the stored
    /// configuration in its epoch count.
    pub fn resume_with(ck: &Checkpoint, ds: &Dataset, config: TrainConfig) -> Result<Self> {
        let mut meta = parse_meta(ck)?;
        let mut a = meta.config.clone();
        a.epochs = config.epochs;
        if a != config {
            return Err(TrainError::Checkpoint(
                "resume configuration differs from the checkpoint beyond the epoch count".into(),
            ));
        }
        meta.config = config;
        Self::restore(ck, meta, ds)
    }

    fn restore(ck: &Checkpoint, meta: Meta, ds: &Dataset) -> Result<Self> {
        if DatasetShape::of(ds) != meta.dataset {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint was trained on {:?}, dataset is {:?}",
                meta.dataset,
                DatasetShape::of(ds)
            )));
        }
        let mut t = Trainer::new(meta.config.clone(), ds)?;
        let mut used = 0;
        used += load_into(&mut t.store, ck, "param/")?;
        if meta.optimizer_step > 0 && t.optimizer.algorithm == crate::nn::Algorithm::Adam {
            let mut m = Vec::with_capacity(t.store.len());
            let mut v = Vec::with_capacity(t.store.len());
            for (name, p) in t.store.iter() {
                for (prefix, out) in [("adam_m/", &mut m), ("adam_v/", &mut v)] {
                    let key = format!("{prefix}{name}");
                    let x = ck.get(&key).ok_or_else(|| TrainError::Checkpoint(format!("missing `{key}`")))?;
                    if x.shape() != p.shape() {
                        return Err(TrainError::Checkpoint(format!("`{key}` has shape {:?}", x.shape())));
                    }
                    out.push(x.data().to_vec());
                    used += 1;
                }
            }
            t.optimizer.state.m = m;
            t.optimizer.state.v = v;
        }
        t.optimizer.state.step = meta.optimizer_step;
        if let Some(dual) = t.dual.as_mut() {
            used += load_into(&mut dual.key, ck, "key/")?;
            let rows = ck.get("bank").ok_or_else(|| TrainError::Checkpoint("missing `bank`".into()))?;
            let head = meta.bank_head.ok_or_else(|| TrainError::Checkpoint("missing bank head".into()))?;
            if rows.shape() != [dual.bank.capacity(), dual.bank.dim()] {
                return Err(TrainError::Checkpoint(format!("bank has shape {:?}", rows.shape())));
            }
            dual.bank = MemoryBank::from_parts(rows.clone(), head)?;
            used += 1;
        }
        if used != ck.tensors.len() {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint holds {} tensors, the configured run uses {used}",
                ck.tensors.len()
            )));
        }
        t.step = meta.step;
        t.history = meta.history;
        t.accum = meta.accum;
        t.warnings = meta.warnings;
        Ok(t)
    }
}

fn parse_meta(ck: &Checkpoint) -> Result<Meta> {
    let meta: Meta = serde_json::from_value(ck.meta.clone())
        .map_err(|e| TrainError::Checkpoint(format!("not a training checkpoint: {e}")))?;
    if meta.kind != CHECKPOINT_KIND {
        return Err(TrainError::Checkpoint(format!("unexpected checkpoint kind `{}`", meta.kind)));
    }
    Ok(meta)
}

/// Overwrites every parameter of `store` from `prefix`-named tensors.
fn load_into(store: &mut ParamStore, ck: &Checkpoint, prefix: &str) -> Result<usize> {
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        let key = format!("{prefix}{}", store.name(id));
        let t = ck.get(&key).ok_or_else(|| TrainError::Checkpoint(format!("missing `{key}`")))?;
        if t.shape() != store.get(id).shape() {
            return Err(TrainError::Checkpoint(format!(
                "`{key}` has shape {:?}, the model expects {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t.clone();
    }
    Ok(ids.len())
}

/// Model and trained parameters from a training checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(InteractionModel, ParamStore, TrainConfig)> {
    let meta = parse_meta(ck)?;
    let mut rng = ChaCha8Rng::seed_from_u64(meta.config.seed);
    let (model, mut store) = InteractionModel::new(meta.config.resolved_model(), &mut rng)?;
    load_into(&mut store, ck, "param/")?;
    Ok((model, store, meta.config))
}
