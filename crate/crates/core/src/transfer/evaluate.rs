use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{cross_entropy, Geometry, Head, HeadConfig, HeadInput};
use super::metrics::{iou, per_class_top1, rmse_log};
use super::{Metric, Result, TaskKind, TransferError};
use crate::data::{depth_map, derive_seed, walkable_mask, Dataset};
use crate::encoder::InteractionModel;
use crate::nn::{Backbone, BackboneConfig, Optimizer, ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Upper bound on head training epochs.
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Stop after this many epochs without a relative loss improvement of
    /// at least `min_improvement`.
    pub patience: usize,
    pub min_improvement: f64,
    pub train_fraction: f64,
    pub seed: u64,
    /// Images per backbone pass during feature extraction.
    pub extract_chunk: usize,
    pub heads: HeadConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            patience: 5,
            min_improvement: 1e-3,
            train_fraction: 0.7,
            seed: 0,
            extract_chunk: 64,
            heads: HeadConfig::default(),
        }
    }
}

/// Backbone parameters held read-only. Heads bind their own stores; the
/// backbone is only ever bound without gradients.
#[derive(Clone, Debug)]
pub struct FrozenBackbone {
    backbone: Backbone,
    params: ParamStore,
}

/// Final features `[N, F, S, S]` and, on request, every stage output.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub features: Tensor,
    pub stages: Vec<Tensor>,
}

impl FrozenBackbone {
    /// The backbone of a trained model. Its parameters lead the model's
    /// store, so the first ids map one-to-one.
    pub fn from_model(model: &InteractionModel, store: &ParamStore) -> Result<Self> {
        let ids = model.backbone_ids();
        let mut params = ParamStore::new();
        for (i, &id) in ids.iter().enumerate() {
            if id != ParamId(i) {
                return Err(TransferError::Geometry("backbone parameters must lead the model store".into()));
            }
            params.add(store.name(id), store.get(id).clone())?;
        }
        Ok(Self { backbone: model.backbone.clone(), params })
    }

    /// A randomly initialized backbone, the untrained baseline.
    pub fn random(config: BackboneConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&mut ParamBuilder::new(&mut params, &mut rng).scope("backbone"), config)?;
        Ok(Self { backbone, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.backbone.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    /// Runs `[N, C, H, W]` images through the backbone in chunks.
    pub fn extract(&self, images: &Tensor, keep_stages: bool, chunk: usize) -> Result<FeatureCache> {
        let s = images.shape().to_vec();
        if s.len() != 4 {
            return Err(TransferError::Geometry(format!("expected [N, C, H, W] images, got {s:?}")));
        }
        let per = s[1] * s[2] * s[3];
        let mut feats = Vec::new();
        let mut stages: Vec<Vec<f64>> = Vec::new();
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        for start in (0..s[0]).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(s[0]);
            let x = Tensor::new([end - start, s[1], s[2], s[3]], images.data()[start * per..end * per].to_vec())?;
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let xv = tape.constant(x);
            let out = self.backbone.forward(&mut tape, &p, xv)?;
            feats.extend_from_slice(tape.value(out.features).data());
            shapes.resize(out.stages.len(), Vec::new());
            if keep_stages {
                stages.resize(out.stages.len(), Vec::new());
                for (i, &v) in out.stages.iter().enumerate() {
                    stages[i].extend_from_slice(tape.value(v).data());
                }
            }
            for (i, &v) in out.stages.iter().enumerate() {
                shapes[i] = tape.shape(v)[1..].to_vec();
            }
        }
        let with_n =
            |n: usize, rest: &[usize]| -> Vec<usize> { std::iter::once(n).chain(rest.iter().copied()).collect() };
        let last = shapes.last().cloned().unwrap_or_default();
        let features = Tensor::new(with_n(s[0], &last), feats)?;
        let stages = stages
            .into_iter()
            .zip(&shapes)
            .map(|(d, sh)| Tensor::new(with_n(s[0], sh), d))
            .collect::<crate::tensor::Result<Vec<_>>>()?;
        Ok(FeatureCache { features, stages })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: TaskKind,
    pub metric: Metric,
    pub value: f64,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Classes absent from the test split, left out of the class mean.
    pub excluded_classes: Vec<usize>,
}

/// Seeded split of `0..len` into train and test indices.
pub fn split_indices(len: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5917, 0)));
    let n_train = ((len as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(len));
    (idx, test)
}

fn frame0_images(ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let size = ds.image_size;
    let mut data = Vec::with_capacity(idx.len() * 3 * size * size);
    for &i in idx {
        data.extend(ds.sequences[i].frame(0, size).iter().map(|&v| v as f64));
    }
    Ok(Tensor::new([idx.len(), 3, size, size], data)?)
}

fn sequence_images(ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let (size, k) = (ds.image_size, ds.seq_len);
    let mut data = Vec::with_capacity(idx.len() * k * 3 * size * size);
    for &i in idx {
        for t in 0..k {
            data.extend(ds.sequences[i].frame(t, size).iter().map(|&v| v as f64));
        }
    }
    Ok(Tensor::new([idx.len() * k, 3, size, size], data)?)
}

enum Inputs {
    Features(Tensor),
    Sequence(Tensor, usize),
    Masked(Tensor, Tensor),
    Stages(Vec<Tensor>),
}

enum Targets {
    Classes(Vec<usize>),
    Mask(Vec<bool>),
    Depth(Vec<f64>),
}

struct Prepared {
    n: usize,
    inputs: Inputs,
    targets: Targets,
}

/// Copies samples `idx` out of a tensor whose leading axis holds `group`
/// rows per sample.
fn gather(t: &Tensor, idx: &[usize], group: usize) -> Tensor {
    let s = t.shape();
    let per: usize = s[1..].iter().product::<usize>() * group;
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = s.to_vec();
    shape[0] = idx.len() * group;
    Tensor::new(shape, data).expect("gathered rows match shape")
}

impl Prepared {
    fn build(kind: TaskKind, ds: &Dataset, idx: &[usize], bb: &FrozenBackbone, cfg: &TransferConfig) -> Result<Self> {
        if idx.is_empty() {
            return Err(TransferError::EmptySplit("task"));
        }
        let size = ds.image_size;
        let metas = idx.iter().map(|&i| &ds.sequences[i].meta);
        let (inputs, targets) = match kind {
            TaskKind::Scene => {
                let f = bb.extract(&frame0_images(ds, idx)?, false, cfg.extract_chunk)?;
                (Inputs::Features(f.features), Targets::Classes(metas.map(|m| m.scene_class()).collect()))
            }
            TaskKind::Action => {
                let f = bb.extract(&sequence_images(ds, idx)?, false, cfg.extract_chunk)?;
                (Inputs::Sequence(f.features, ds.seq_len), Targets::Classes(metas.map(|m| m.action_class()).collect()))
            }
            TaskKind::Dynamics => {
                let f = bb.extract(&frame0_images(ds, idx)?, false, cfg.extract_chunk)?;
                let mut masks = Vec::with_capacity(idx.len() * size * size);
                for m in metas.clone() {
                    let (x0, y0, x1, y1) = m.marked_box(size);
                    masks.extend((0..size * size).map(|p| {
                        let (x, y) = (p % size, p / size);
                        if x >= x0 && x < x1 && y >= y0 && y < y1 {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                }
                let masks = Tensor::new([idx.len(), 1, size, size], masks)?;
                (Inputs::Masked(f.features, masks), Targets::Classes(metas.map(|m| m.dynamics_class()).collect()))
            }
            TaskKind::Walkable | TaskKind::Depth => {
                let f = bb.extract(&frame0_images(ds, idx)?, true, cfg.extract_chunk)?;
                let targets = if kind == TaskKind::Walkable {
                    Targets::Mask(metas.flat_map(|m| walkable_mask(m, size)).collect())
                } else {
                    Targets::Depth(metas.flat_map(|m| depth_map(m, size)).collect())
                };
                (Inputs::Stages(f.stages), targets)
            }
        };
        Ok(Self { n: idx.len(), inputs, targets })
    }

    fn pixels(&self) -> usize {
        match &self.targets {
            Targets::Mask(m) => m.len() / self.n,
            Targets::Depth(d) => d.len() / self.n,
            Targets::Classes(_) => 1,
        }
    }

    /// Runs the head on samples `idx`, returning the output var.
    fn forward(&self, tape: &mut Tape, head: &Head, p: &crate::nn::Bound, idx: &[usize]) -> Result<crate::tensor::Var> {
        match &self.inputs {
            Inputs::Features(f) => {
                let x = tape.constant(gather(f, idx, 1));
                head.forward(tape, p, HeadInput::Features(x))
            }
            Inputs::Sequence(f, k) => {
                let x = tape.constant(gather(f, idx, *k));
                head.forward(tape, p, HeadInput::Sequence(x, idx.len()))
            }
            Inputs::Masked(f, m) => {
                let x = tape.constant(gather(f, idx, 1));
                let mv = tape.constant(gather(m, idx, 1));
                head.forward(tape, p, HeadInput::Masked(x, mv))
            }
            Inputs::Stages(st) => {
                let vars: Vec<_> = st.iter().map(|s| tape.constant(gather(s, idx, 1))).collect();
                head.forward(tape, p, HeadInput::Stages(&vars))
            }
        }
    }

    fn loss(&self, tape: &mut Tape, out: crate::tensor::Var, idx: &[usize]) -> Result<crate::tensor::Var> {
        let px = self.pixels();
        match &self.targets {
            Targets::Classes(c) => {
                let labels: Vec<usize> = idx.iter().map(|&i| c[i]).collect();
                cross_entropy(tape, out, &labels)
            }
            Targets::Mask(m) => {
                let labels: Vec<f64> =
                    idx.iter().flat_map(|&i| m[i * px..(i + 1) * px].iter().map(|&b| f64::from(u8::from(b)))).collect();
                let all = vec![true; labels.len()];
                Ok(tape.masked_bce_with_logits(out, &labels, &all)?)
            }
            Targets::Depth(d) => {
                let logs: Vec<f64> = idx.iter().flat_map(|&i| d[i * px..(i + 1) * px].iter().map(|v| v.ln())).collect();
                let shape = tape.shape(out).to_vec();
                let t = tape.constant(Tensor::new(shape, logs)?);
                let diff = tape.sub(out, t)?;
                let sq = tape.mul(diff, diff)?;
                Ok(tape.mean(sq))
            }
        }
    }
}

fn train_and_score(
    kind: TaskKind,
    train: &Prepared,
    test: &Prepared,
    geometry: Geometry,
    cfg: &TransferConfig,
) -> Result<TaskResult> {
    let task_seed = derive_seed(cfg.seed, 0x4ead, kind as u64);
    let (head, mut store) = Head::new(kind, geometry, &cfg.heads, task_seed)?;
    let mut opt = Optimizer::adam(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs_run = 0;
    let mut last = f64::NAN;
    let mut order: Vec<usize> = (0..train.n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, true);
            let out = train.forward(&mut tape, &head, &p, chunk)?;
            let loss = train.loss(&mut tape, out, chunk)?;
            let v = tape.item(loss);
            if !v.is_finite() {
                return Err(TransferError::NonFinite(kind.name()));
            }
            tape.backward(loss)?;
            let mut grads = store.collect_grads(&tape, &p);
            for (id, g) in store.ids().zip(grads.values.iter_mut()) {
                if g.is_none() {
                    *g = Some(vec![0.0; store.get(id).numel()]);
                }
            }
            opt.step(&mut store, &grads)?;
            sum += v * chunk.len() as f64;
            count += chunk.len();
        }
        epochs_run += 1;
        last = sum / count as f64;
        if last < best * (1.0 - cfg.min_improvement) {
            best = last;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let chunk = cfg.extract_chunk.max(1);
    let all: Vec<usize> = (0..test.n).collect();
    let mut excluded = Vec::new();
    let value = match &test.targets {
        Targets::Classes(labels) => {
            let classes = kind.classes().expect("classification task");
            let mut preds = Vec::with_capacity(test.n);
            for idx in all.chunks(chunk) {
                let mut tape = Tape::new();
                let p = store.bind(&mut tape, false);
                let out = test.forward(&mut tape, &head, &p, idx)?;
                for row in tape.value(out).data().chunks(classes) {
                    let arg = row
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                        .0;
                    preds.push(arg);
                }
            }
            let acc = per_class_top1(&preds, labels, classes)?;
            excluded = acc.excluded;
            acc.percent
        }
        Targets::Mask(target) => {
            let px = test.pixels();
            let mut total = 0.0;
            for idx in all.chunks(chunk) {
                let mut tape = Tape::new();
                let p = store.bind(&mut tape, false);
                let out = test.forward(&mut tape, &head, &p, idx)?;
                for (j, logits) in tape.value(out).data().chunks(px).enumerate() {
                    let pred: Vec<bool> = logits.iter().map(|&z| z > 0.0).collect();
                    let i = idx[j];
                    total += iou(&pred, &target[i * px..(i + 1) * px])?;
                }
            }
            total / test.n as f64
        }
        Targets::Depth(target) => {
            let mut pred = Vec::with_capacity(target.len());
            for idx in all.chunks(chunk) {
                let mut tape = Tape::new();
                let p = store.bind(&mut tape, false);
                let out = test.forward(&mut tape, &head, &p, idx)?;
                pred.extend(tape.value(out).data().iter().map(|v| v.exp()));
            }
            rmse_log(&pred, target)?
        }
    };
    Ok(TaskResult {
        task: kind,
        metric: kind.metric(),
        value,
        epochs_run,
        final_loss: last,
        train_size: train.n,
        test_size: test.n,
        excluded_classes: excluded,
    })
}

/// Trains a fresh head for `kind` on the `train` sequences over frozen
/// features and scores it on `test`.
pub fn evaluate(
    backbone: &FrozenBackbone,
    kind: TaskKind,
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    cfg: &TransferConfig,
) -> Result<TaskResult> {
    if train.is_empty() {
        return Err(TransferError::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(TransferError::EmptySplit("test"));
    }
    if ds.image_size != backbone.config().input_size {
        return Err(TransferError::Geometry(format!(
            "backbone takes {}px images, dataset has {}px",
            backbone.config().input_size,
            ds.image_size
        )));
    }
    let before = backbone.fingerprint();
    let geometry = Geometry::of(backbone.config(), ds.seq_len);
    let tr = Prepared::build(kind, ds, train, backbone, cfg)?;
    let te = Prepared::build(kind, ds, test, backbone, cfg)?;
    let result = train_and_score(kind, &tr, &te, geometry, cfg)?;
    if backbone.fingerprint() != before {
        return Err(TransferError::BackboneModified);
    }
    Ok(result)
}

/// [`evaluate`] for several tasks on one seeded split of `ds`.
pub fn evaluate_tasks(
    backbone: &FrozenBackbone,
    kinds: &[TaskKind],
    ds: &Dataset,
    cfg: &TransferConfig,
) -> Result<Vec<TaskResult>> {
    let (train, test) = split_indices(ds.len(), cfg.train_fraction, cfg.seed);
    kinds.iter().map(|&k| evaluate(backbone, k, ds, &train, &test, cfg)).collect()
}

/// Rows are representations (objective modes or baselines), columns tasks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub config: serde_json::Value,
    pub rows: Vec<(String, Vec<TaskResult>)>,
}

impl ResultsTable {
    pub fn push(&mut self, label: impl Into<String>, results: Vec<TaskResult>) {
        self.rows.push((label.into(), results));
    }

    pub fn value(&self, label: &str, task: TaskKind) -> Option<f64> {
        let (_, r) = self.rows.iter().find(|(l, _)| l == label)?;
        r.iter().find(|x| x.task == task).map(|x| x.value)
    }

    /// `mode,scene,action,dynamics,walkable,depth` with empty cells for
    /// tasks that were not run, after a `#` line holding the configuration.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# config: {}", serde_json::to_string(&self.config).expect("json value"))?;
        let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
        writeln!(out, "mode,{}", names.join(","))?;
        for (label, results) in &self.rows {
            let cells: Vec<String> = TaskKind::ALL
                .iter()
                .map(|&t| results.iter().find(|r| r.task == t).map(|r| format!("{:.6}", r.value)).unwrap_or_default())
                .collect();
            writeln!(out, "{label},{}", cells.join(","))?;
        }
        Ok(())
    }
}
