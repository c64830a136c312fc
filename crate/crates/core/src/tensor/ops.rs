//! Forward definitions of every tape op plus the shared numeric kernels.

use super::tape::{channel_layout, Op};
use super::{Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[inline]
pub(crate) fn at(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `y·softplus(−x) + (1−y)·softplus(x)`, skipping zero-weight terms so that
/// saturated logits on the matching label give exactly zero.
#[inline]
fn bce_term(x: f64, y: f64) -> f64 {
    let mut loss = 0.0;
    if y != 0.0 {
        loss += y * softplus(-x);
    }
    if y != 1.0 {
        loss += (1.0 - y) * softplus(x);
    }
    loss
}

/// `C[m,n] = A[m,k] · B[k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let br = &b[p * n..(p + 1) * n];
            for (cv, bv) in row.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `A[m,n] · B[k,n]ᵀ`, result `[m,k]`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            c[i * k + p] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `A[m,k]ᵀ · B[m,n]`, result `[k,n]`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let row = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in row.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 || data.is_empty() {
        return data.to_vec();
    }
    // Walk the output in order, moving the source offset incrementally; the
    // innermost axis is copied in one run when it stays contiguous.
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() / inner {
        if inner_stride == 1 {
            out.extend_from_slice(&data[src..src + inner]);
        } else {
            out.extend((0..inner).map(|i| data[src + i * inner_stride]));
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                src += strides[d];
                break;
            }
            src -= strides[d] * (out_shape[d] - 1);
            idx[d] = 0;
        }
    }
    out
}

fn im2col(x: &[f64], g: &Conv2dGeometry) -> Vec<f64> {
    let cols = g.channels * g.kernel_h * g.kernel_w;
    let rows = g.batch * g.out_h * g.out_w;
    let mut out = vec![0.0; rows * cols];
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let r = (n * g.out_h + oy) * g.out_w + ox;
                let row = &mut out[r * cols..(r + 1) * cols];
                let mut col = 0;
                for c in 0..g.channels {
                    let plane = &x[(n * g.channels + c) * g.height * g.width..];
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                row[col] = plane[iy as usize * g.width + ix as usize];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn col2im(cols_grad: &[f64], g: &Conv2dGeometry) -> Vec<f64> {
    let cols = g.channels * g.kernel_h * g.kernel_w;
    let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let r = (n * g.out_h + oy) * g.out_w + ox;
                let row = &cols_grad[r * cols..(r + 1) * cols];
                let mut col = 0;
                for c in 0..g.channels {
                    let base = (n * g.channels + c) * g.height * g.width;
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                out[base + iy as usize * g.width + ix as usize] += row[col];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

impl Conv2dGeometry {
    fn single(&self) -> Self {
        Self { batch: 1, ..*self }
    }

    fn in_plane(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }
}

/// Direct convolution output `[N, F, OH, OW]` for weights `[F, C·KH·KW]`.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], filters: usize, g: &Conv2dGeometry) -> Vec<f64> {
    let one = g.single();
    let (ip, op, k) = (g.in_plane(), g.out_plane(), g.patch());
    let mut out = Vec::with_capacity(g.batch * filters * op);
    for n in 0..g.batch {
        let cols = im2col(&x[n * ip..(n + 1) * ip], &one);
        out.extend(matmul_nt(w, &cols, filters, k, op));
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and weights.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    filters: usize,
    g: &Conv2dGeometry,
    need_x: bool,
    need_w: bool,
) -> (Vec<f64>, Vec<f64>) {
    let one = g.single();
    let (ip, op, k) = (g.in_plane(), g.out_plane(), g.patch());
    let mut gx = if need_x { Vec::with_capacity(g.batch * ip) } else { Vec::new() };
    let mut gw = vec![0.0; if need_w { filters * k } else { 0 }];
    for n in 0..g.batch {
        let gyn = &gy[n * filters * op..(n + 1) * filters * op];
        if need_w {
            let cols = im2col(&x[n * ip..(n + 1) * ip], &one);
            for (a, b) in gw.iter_mut().zip(matmul(gyn, &cols, filters, op, k)) {
                *a += b;
            }
        }
        if need_x {
            let gcols = matmul_tn(gyn, w, filters, op, k);
            gx.extend(col2im(&gcols, &one));
        }
    }
    (gx, gw)
}

pub(crate) fn avg_pool_backward(grad: &[f64], g: &PoolGeometry) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
    let scale = 1.0 / (g.kernel * g.kernel) as f64;
    for nc in 0..g.batch * g.channels {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let gv = grad[(nc * g.out_h + oy) * g.out_w + ox] * scale;
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let iy = oy * g.stride + ky;
                        let ix = ox * g.stride + kx;
                        out[(nc * g.height + iy) * g.width + ix] += gv;
                    }
                }
            }
        }
    }
    out
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn invalid(op: &'static str, shape: &[usize], reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape { op, shape: shape.to_vec(), reason: reason.into() }
}

impl Tape {
    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = &self.nodes[a.0].value;
        let data = value.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(value.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        self.push(out, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        let shape = if sa == sb || nb == 1 {
            sa.clone()
        } else if na == 1 {
            sb.clone()
        } else {
            return Err(mismatch(name, &sa, &sb));
        };
        let n = na.max(nb);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = (0..n).map(|i| f(at(av, i), at(bv, i))).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    /// Elementwise sum. Operands must share a shape or one must be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::MulScalar(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// `log(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), sa[0], sa[1], sb[1]);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![sa[0], sb[1]], data)?, Op::Matmul(a, b), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(invalid("permute", &shape, format!("axes {axes:?} are not a permutation")));
        }
        let data = permute(self.value(a).data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Swaps the two axes of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.permute(a, &[1, 0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| invalid("concat", &[], "no inputs"))?;
        for &v in inputs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", &base, format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(inputs.to_vec(), axis), rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(invalid("slice", &shape, format!("range {start}..{end} on axis {axis}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        let name = if mean { "mean_axis" } else { "sum_axis" };
        if axis >= shape.len() {
            return Err(invalid(name, &shape, format!("axis {axis} out of range")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * len + l) * inner + i];
                }
            }
        }
        if mean {
            for v in &mut data {
                *v /= len as f64;
            }
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let last = *v.shape().last().unwrap();
        let mut data = Vec::with_capacity(v.numel());
        for row in v.data().chunks(last) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.iter().map(|x| x / s));
        }
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// `log Σ exp` along the last axis, shifted by the row maximum.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let shape = v.shape();
        let last = *shape.last().unwrap();
        let data: Vec<f64> = v
            .data()
            .chunks(last)
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m.is_infinite() {
                    return m;
                }
                m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(out_shape, data).expect("row count");
        let rg = self.requires_grad(a);
        self.push(out, Op::LogSumExp(a), rg)
    }

    /// Scales each row along the last axis to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        const EPS: f64 = 1e-12;
        let v = self.value(a);
        let last = *v.shape().last().unwrap();
        let mut data = Vec::with_capacity(v.numel());
        for row in v.data().chunks(last) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
            data.extend(row.iter().map(|x| x / n));
        }
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        self.push(out, Op::L2Normalize(a, EPS), rg)
    }

    fn channel_op(&mut self, name: &'static str, x: Var, c: Var) -> Result<(Vec<usize>, usize, usize)> {
        self.check(x)?;
        self.check(c)?;
        let sx = self.shape(x).to_vec();
        let sc = self.shape(c).to_vec();
        if sx.len() < 2 || sc.len() != 1 || sc[0] != sx[1] {
            return Err(mismatch(name, &sx, &sc));
        }
        let (ch, inner) = channel_layout(&sx);
        Ok((sx, ch, inner))
    }

    /// Adds a per-channel vector along axis 1 of an `[N, C, ...]` tensor.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (shape, c, inner) = self.channel_op("bias_add", x, bias)?;
        let b = self.value(bias).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, v)| v + b[(i / inner) % c]).collect();
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Tensor::new(shape, data)?, Op::BiasAdd(x, bias), rg))
    }

    /// Multiplies axis 1 of an `[N, C, ...]` tensor by a per-channel vector.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (shape, c, inner) = self.channel_op("scale_channels", x, scale)?;
        let s = self.value(scale).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, v)| v * s[(i / inner) % c]).collect();
        let rg = self.any_grad(&[x, scale]);
        Ok(self.push(Tensor::new(shape, data)?, Op::ScaleChannels(x, scale), rg))
    }

    /// Gathers convolution patches of an `[N, C, H, W]` input into rows of a
    /// `[N·OH·OW, C·KH·KW]` matrix.
    pub fn im2col(&mut self, x: Var, kernel: (usize, usize), stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 4 || stride == 0 {
            return Err(invalid("im2col", &s, "expected [N, C, H, W] and positive stride"));
        }
        let (kh, kw) = kernel;
        if s[2] + 2 * padding < kh || s[3] + 2 * padding < kw {
            return Err(invalid("im2col", &s, format!("kernel {kh}x{kw} larger than padded input")));
        }
        let geom = Conv2dGeometry {
            batch: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (s[2] + 2 * padding - kh) / stride + 1,
            out_w: (s[3] + 2 * padding - kw) / stride + 1,
        };
        let data = im2col(self.value(x).data(), &geom);
        let shape = vec![geom.batch * geom.out_h * geom.out_w, geom.channels * kh * kw];
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Im2col(x, geom), rg))
    }

    /// 2-D convolution of `[N, C, H, W]` input with `[F, C, KH, KW]` weights,
    /// optionally adding a `[F]` bias.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        self.check(weight)?;
        let sx = self.shape(x).to_vec();
        let sw = self.shape(weight).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        let f = sw[0];
        if stride == 0 || sx[2] + 2 * padding < sw[2] || sx[3] + 2 * padding < sw[3] {
            return Err(invalid("conv2d", &sx, format!("kernel {}x{} stride {stride}", sw[2], sw[3])));
        }
        let geom = Conv2dGeometry {
            batch: sx[0],
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kernel_h: sw[2],
            kernel_w: sw[3],
            stride,
            padding,
            out_h: (sx[2] + 2 * padding - sw[2]) / stride + 1,
            out_w: (sx[3] + 2 * padding - sw[3]) / stride + 1,
        };
        let data = conv2d_forward(self.value(x).data(), self.value(weight).data(), f, &geom);
        let rg = self.any_grad(&[x, weight]);
        let y = self.push(
            Tensor::new([geom.batch, f, geom.out_h, geom.out_w], data)?,
            Op::Conv2d { input: x, weight, geom },
            rg,
        );
        match bias {
            Some(b) => self.bias_add(y, b),
            None => Ok(y),
        }
    }

    fn pool_geometry(&self, name: &'static str, x: Var, kernel: usize, stride: usize) -> Result<PoolGeometry> {
        self.check(x)?;
        let s = self.shape(x);
        if s.len() != 4 || kernel == 0 || stride == 0 || s[2] < kernel || s[3] < kernel {
            return Err(invalid(name, s, format!("kernel {kernel}, stride {stride}")));
        }
        Ok(PoolGeometry {
            batch: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            kernel,
            stride,
            out_h: (s[2] - kernel) / stride + 1,
            out_w: (s[3] - kernel) / stride + 1,
        })
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let g = self.pool_geometry("max_pool2d", x, kernel, stride)?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(g.batch * g.channels * g.out_h * g.out_w);
        let mut argmax = Vec::with_capacity(data.capacity());
        for nc in 0..g.batch * g.channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = (nc * g.height + oy * g.stride) * g.width + ox * g.stride;
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            let i = (nc * g.height + oy * g.stride + ky) * g.width + ox * g.stride + kx;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    data.push(src[best_i]);
                    argmax.push(best_i);
                }
            }
        }
        let shape = vec![g.batch, g.channels, g.out_h, g.out_w];
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::MaxPool(x, argmax), rg))
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let g = self.pool_geometry("avg_pool2d", x, kernel, stride)?;
        let src = self.value(x).data();
        let scale = 1.0 / (kernel * kernel) as f64;
        let mut data = Vec::with_capacity(g.batch * g.channels * g.out_h * g.out_w);
        for nc in 0..g.batch * g.channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut s = 0.0;
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            s += src[(nc * g.height + oy * g.stride + ky) * g.width + ox * g.stride + kx];
                        }
                    }
                    data.push(s * scale);
                }
            }
        }
        let shape = vec![g.batch, g.channels, g.out_h, g.out_w];
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::AvgPool(x, g), rg))
    }

    /// Mean over the spatial axes of `[N, C, H, W]`, giving `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(invalid("global_avg_pool", &s, "expected [N, C, H, W]"));
        }
        let flat = self.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
        self.mean_axis(flat, 2)
    }

    /// Rearranges `[N, C·r², H, W]` into `[N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let r2 = factor * factor;
        if s.len() != 4 || factor == 0 || !s[1].is_multiple_of(r2) {
            return Err(invalid("pixel_shuffle", &s, format!("channels not divisible by {r2}")));
        }
        let (n, c, h, w) = (s[0], s[1] / r2, s[2], s[3]);
        let y = self.reshape(x, &[n, c, factor, factor, h, w])?;
        let y = self.permute(y, &[0, 1, 4, 2, 5, 3])?;
        self.reshape(y, &[n, c, h * factor, w * factor])
    }

    /// Mean Huber penalty over entries with a true mask; zero when none are.
    pub fn masked_huber(&mut self, pred: Var, target: &[f64], mask: &[bool], delta: f64) -> Result<Var> {
        self.check(pred)?;
        let n = self.value(pred).numel();
        if target.len() != n || mask.len() != n {
            return Err(mismatch("masked_huber", self.shape(pred), &[target.len(), mask.len()]));
        }
        let x = self.value(pred).data();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if mask[i] {
                let e = (x[i] - target[i]).abs();
                total += if e < delta { 0.5 * e * e } else { delta * (e - 0.5 * delta) };
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.requires_grad(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::MaskedHuber { input: pred, target: target.to_vec(), mask: mask.to_vec(), delta },
            rg,
        ))
    }

    /// Mean sigmoid cross-entropy over entries with a true mask; masked-out
    /// logits are never read.
    pub fn masked_bce_with_logits(&mut self, logits: Var, labels: &[f64], mask: &[bool]) -> Result<Var> {
        self.check(logits)?;
        let n = self.value(logits).numel();
        if labels.len() != n || mask.len() != n {
            return Err(mismatch("masked_bce", self.shape(logits), &[labels.len(), mask.len()]));
        }
        let x = self.value(logits).data();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if mask[i] {
                total += bce_term(x[i], labels[i]);
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::MaskedBce { input: logits, labels: labels.to_vec(), mask: mask.to_vec() },
            rg,
        ))
    }
}
