use super::ops::{self, Conv2dGeometry, PoolGeometry};
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Softplus(Var),
    Matmul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Softmax(Var),
    LogSumExp(Var),
    L2Normalize(Var, f64),
    BiasAdd(Var, Var),
    ScaleChannels(Var, Var),
    Im2col(Var, Conv2dGeometry),
    Conv2d { input: Var, weight: Var, geom: Conv2dGeometry },
    MaxPool(Var, Vec<usize>),
    AvgPool(Var, PoolGeometry),
    MaskedHuber { input: Var, target: Vec<f64>, mask: Vec<bool>, delta: f64 },
    MaskedBce { input: Var, labels: Vec<f64>, mask: Vec<bool> },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Softplus(..) => "softplus",
            Op::Matmul(..) => "matmul",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::Softmax(..) => "softmax",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::L2Normalize(..) => "l2_normalize",
            Op::BiasAdd(..) => "bias_add",
            Op::ScaleChannels(..) => "scale_channels",
            Op::Im2col(..) => "im2col",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool(..) => "max_pool2d",
            Op::AvgPool(..) => "avg_pool2d",
            Op::MaskedHuber { .. } => "masked_huber",
            Op::MaskedBce { .. } => "masked_bce",
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so the record is always a valid
/// topological order and backward simply walks it in reverse.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires them. Gradients from a previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        self.check(loss)?;
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    /// Gradient flowing into a possibly scalar-broadcast operand.
    fn accumulate_broadcast(&mut self, v: Var, delta: Vec<f64>) {
        if self.nodes[v.0].value.numel() == 1 && delta.len() != 1 {
            let s: f64 = delta.iter().sum();
            self.accumulate(v, &[s]);
        } else {
            self.accumulate(v, &delta);
        }
    }

    fn val(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(a, g.to_vec());
                self.accumulate_broadcast(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(a, g.to_vec());
                let gb = g.iter().map(|x| -x).collect();
                self.accumulate_broadcast(b, gb);
            }
            Op::Mul(a, b) => {
                let av = self.val(a);
                let bv = self.val(b);
                let ga: Vec<f64> = (0..g.len()).map(|i| g[i] * ops::at(bv, i)).collect();
                let gb: Vec<f64> = (0..g.len()).map(|i| g[i] * ops::at(av, i)).collect();
                self.accumulate_broadcast(a, ga);
                self.accumulate_broadcast(b, gb);
            }
            Op::Div(a, b) => {
                let av = self.val(a);
                let bv = self.val(b);
                let ga: Vec<f64> = (0..g.len()).map(|i| g[i] / ops::at(bv, i)).collect();
                let gb: Vec<f64> = (0..g.len())
                    .map(|i| {
                        let d = ops::at(bv, i);
                        -g[i] * ops::at(av, i) / (d * d)
                    })
                    .collect();
                self.accumulate_broadcast(a, ga);
                self.accumulate_broadcast(b, gb);
            }
            Op::AddScalar(a) => self.accumulate(a, g),
            Op::MulScalar(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                self.accumulate(a, &ga);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = self.val(a).iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(a, &ga);
            }
            Op::LeakyRelu(a, slope) => {
                let ga: Vec<f64> =
                    self.val(a).iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { slope * g }).collect();
                self.accumulate(a, &ga);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[id].value.data();
                let ga: Vec<f64> = y.iter().zip(g).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                self.accumulate(a, &ga);
            }
            Op::Tanh(a) => {
                let y = self.nodes[id].value.data();
                let ga: Vec<f64> = y.iter().zip(g).map(|(&y, &g)| g * (1.0 - y * y)).collect();
                self.accumulate(a, &ga);
            }
            Op::Exp(a) => {
                let y = self.nodes[id].value.data();
                let ga: Vec<f64> = y.iter().zip(g).map(|(&y, &g)| g * y).collect();
                self.accumulate(a, &ga);
            }
            Op::Log(a) => {
                let ga: Vec<f64> = self.val(a).iter().zip(g).map(|(&x, &g)| g / x).collect();
                self.accumulate(a, &ga);
            }
            Op::Sqrt(a) => {
                let y = self.nodes[id].value.data();
                let ga: Vec<f64> = y.iter().zip(g).map(|(&y, &g)| g * 0.5 / y).collect();
                self.accumulate(a, &ga);
            }
            Op::Softplus(a) => {
                let ga: Vec<f64> = self.val(a).iter().zip(g).map(|(&x, &g)| g * ops::sigmoid(x)).collect();
                self.accumulate(a, &ga);
            }
            Op::Matmul(a, b) => {
                let (m, k) = dims2(self.nodes[a.0].value.shape());
                let n = self.nodes[b.0].value.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let ga = ops::matmul_nt(g, self.val(b), m, n, k);
                    self.accumulate(a, &ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = ops::matmul_tn(self.val(a), g, m, k, n);
                    self.accumulate(b, &gb);
                }
            }
            Op::Permute(a, axes) => {
                let in_shape = self.nodes[a.0].value.shape().to_vec();
                let out_shape: Vec<usize> = axes.iter().map(|&ax| in_shape[ax]).collect();
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let ga = ops::permute(g, &out_shape, &inverse);
                self.accumulate(a, &ga);
            }
            Op::Reshape(a) => self.accumulate(a, g),
            Op::Concat(inputs, axis) => {
                let out_shape = self.nodes[id].value.shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0;
                for v in inputs {
                    let len = self.nodes[v.0].value.shape()[axis];
                    if self.nodes[v.0].requires_grad {
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + len * inner]);
                        }
                        self.accumulate(v, &gv);
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.nodes[input.0].value.shape().to_vec();
                let len = self.nodes[id].value.shape()[axis];
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let mut ga = vec![0.0; in_shape.iter().product()];
                for o in 0..outer {
                    let dst = (o * in_shape[axis] + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.accumulate(input, &ga);
            }
            Op::Sum(a) => {
                let n = self.val(a).len();
                self.accumulate(a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.val(a).len();
                self.accumulate(a, &vec![g[0] / n as f64; n]);
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let outer: usize = shape[..axis].iter().product();
                let len = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let scale = if matches!(op, Op::MeanAxis(..)) { 1.0 / len as f64 } else { 1.0 };
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            ga[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::Softmax(a) => {
                let y = self.nodes[id].value.data();
                let last = *self.nodes[id].value.shape().last().unwrap();
                let mut ga = vec![0.0; y.len()];
                for (row, (yr, gr)) in y.chunks(last).zip(g.chunks(last)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..last {
                        ga[row * last + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::LogSumExp(a) => {
                let x = self.val(a);
                let last = *self.nodes[a.0].value.shape().last().unwrap();
                let out = self.nodes[id].value.data();
                let mut ga = vec![0.0; x.len()];
                for (row, xr) in x.chunks(last).enumerate() {
                    for j in 0..last {
                        ga[row * last + j] = g[row] * (xr[j] - out[row]).exp();
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::L2Normalize(a, eps) => {
                let x = self.val(a);
                let y = self.nodes[id].value.data();
                let last = *self.nodes[a.0].value.shape().last().unwrap();
                let mut ga = vec![0.0; x.len()];
                for row in 0..x.len() / last {
                    let r = row * last..(row + 1) * last;
                    let norm = x[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > eps {
                        let dot: f64 = y[r.clone()].iter().zip(&g[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            ga[j] = (g[j] - y[j] * dot) / norm;
                        }
                    } else {
                        for j in r {
                            ga[j] = g[j] / eps;
                        }
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::BiasAdd(x, b) => {
                self.accumulate(x, g);
                let (c, inner) = channel_layout(self.nodes[x.0].value.shape());
                let mut gb = vec![0.0; c];
                for (i, gv) in g.iter().enumerate() {
                    gb[(i / inner) % c] += gv;
                }
                self.accumulate(b, &gb);
            }
            Op::ScaleChannels(x, s) => {
                let (c, inner) = channel_layout(self.nodes[x.0].value.shape());
                let sv = self.val(s);
                let xv = self.val(x);
                let gx: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * sv[(i / inner) % c]).collect();
                let mut gs = vec![0.0; c];
                for (i, gv) in g.iter().enumerate() {
                    gs[(i / inner) % c] += gv * xv[i];
                }
                self.accumulate(x, &gx);
                self.accumulate(s, &gs);
            }
            Op::Im2col(a, geom) => {
                let ga = ops::col2im(g, &geom);
                self.accumulate(a, &ga);
            }
            Op::Conv2d { input, weight, geom } => {
                let filters = self.nodes[weight.0].value.shape()[0];
                let (gx, gw) = ops::conv2d_backward(
                    self.val(input),
                    self.val(weight),
                    g,
                    filters,
                    &geom,
                    self.nodes[input.0].requires_grad,
                    self.nodes[weight.0].requires_grad,
                );
                if !gx.is_empty() {
                    self.accumulate(input, &gx);
                }
                if !gw.is_empty() {
                    self.accumulate(weight, &gw);
                }
            }
            Op::MaxPool(a, argmax) => {
                let mut ga = vec![0.0; self.val(a).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    ga[src] += g[o];
                }
                self.accumulate(a, &ga);
            }
            Op::AvgPool(a, geom) => {
                let ga = ops::avg_pool_backward(g, &geom);
                self.accumulate(a, &ga);
            }
            Op::MaskedHuber { input, target, mask, delta } => {
                let count = mask.iter().filter(|m| **m).count();
                let x = self.val(input);
                let ga: Vec<f64> = (0..x.len())
                    .map(|i| {
                        if !mask[i] || count == 0 {
                            return 0.0;
                        }
                        let e = x[i] - target[i];
                        let d = if e.abs() < delta { e } else { delta * e.signum() };
                        g[0] * d / count as f64
                    })
                    .collect();
                self.accumulate(input, &ga);
            }
            Op::MaskedBce { input, labels, mask } => {
                let count = mask.iter().filter(|m| **m).count();
                let x = self.val(input);
                let ga: Vec<f64> = (0..x.len())
                    .map(|i| {
                        if !mask[i] || count == 0 {
                            0.0
                        } else {
                            g[0] * (ops::sigmoid(x[i]) - labels[i]) / count as f64
                        }
                    })
                    .collect();
                self.accumulate(input, &ga);
            }
        }
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

/// Channel count and per-channel inner extent for an `[N, C, ...]` layout.
pub(crate) fn channel_layout(shape: &[usize]) -> (usize, usize) {
    let c = shape[1];
    let inner = shape[2..].iter().product();
    (c, inner)
}
