//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation evaluates eagerly and appends a node holding its output
//! value and the handles of its inputs. `backward` walks the tape once in
//! reverse, applying each node's local vector-Jacobian product. A tape is
//! single-threaded; run one tape per worker.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow { a: Var, row: Var },
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Abs(Var),
    Min(Var, Var),
    Max(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    AvgPool {
        x: Var,
        window: usize,
        mask: Option<Vec<bool>>,
    },
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    FoldHalvesMean(Var),
    Sum(Var),
    Mean(Var),
    Index { a: Var, flat: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow { .. } => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::AvgPool { .. } => "avg_pool_1d",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::FoldHalvesMean(..) => "fold_halves_mean",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Index { .. } => "index",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    check_finite: bool,
    corrupt: Option<&'static str>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// `c (+)= op(a) · op(b)` where `op` optionally transposes a stored row-major matrix.
/// `a` is `m×k` after transposition, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above against the strides passed in.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Neighbour window `[i - w/2, i + w/2] ∩ [0, len)` restricted to unmasked rows.
fn pool_neighbours(i: usize, len: usize, window: usize, mask: Option<&[bool]>) -> impl Iterator<Item = usize> + '_ {
    let half = window / 2;
    let lo = i.saturating_sub(half);
    let hi = (i + half).min(len - 1);
    (lo..=hi).filter(move |&j| mask.is_none_or(|m| m[j]))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            check_finite: cfg!(debug_assertions),
            corrupt: None,
        }
    }

    /// Enables or disables the per-op NaN/Inf check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Test hook: scales the backward contribution of every op with this name by 1.5.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, op_name: &'static str) {
        self.corrupt = Some(op_name);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused for a new graph.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.backward_done {
            return Err(Error::Contract("tape already differentiated; reset it first".into()));
        }
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(format!("{} produced a non-finite value", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 2 && sb.len() == 2 && if trans_b { sa[1] == sb[1] } else { sa[1] == sb[0] };
        if !ok {
            return Err(Error::Shape {
                op: if trans_b { "matmul_t" } else { "matmul" },
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if trans_b { sb[0] } else { sb[1] };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_b }, rg)
    }

    /// `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m×k] · [n×k]ᵀ -> [m×n]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "min", f64::min, Op::Min(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "max", f64::max, Op::Max(a, b))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(row).len() != cols {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let va = self.value(a);
        let data = va.data().iter().enumerate().map(|(i, &x)| x + r[i % cols]).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        self.push(t, Op::AddRow { a, row }, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Elementwise product with a constant (non-differentiable) tensor.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: self.shape(a).to_vec(),
                rhs: vec![c.len()],
            });
        }
        let va = self.value(a);
        let data = va.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::MulConst(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Softmax along the last axis, max-subtracted. Columns whose `key_mask`
    /// entry is false receive probability exactly zero.
    pub fn softmax(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        if let Some(m) = key_mask {
            if m.len() != cols || !m.iter().any(|&b| b) {
                return Err(Error::Shape {
                    op: "softmax",
                    lhs: va.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
        let mut out = vec![0.0; va.len()];
        for (src, dst) in va.data().chunks(cols).zip(out.chunks_mut(cols)) {
            let mx = (0..cols).filter(|&j| keep(j)).map(|j| src[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..cols {
                if keep(j) {
                    dst[j] = (src[j] - mx).exp();
                    z += dst[j];
                }
            }
            for d in dst.iter_mut() {
                *d /= z;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        let mut out = vec![0.0; va.len()];
        for (src, dst) in va.data().chunks(cols).zip(out.chunks_mut(cols)) {
            let mx = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + src.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::LogSoftmax(a), rg)
    }

    /// Per-row layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = vx.rows();
        let mut xhat = vec![0.0; vx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let src = vx.row(r);
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (src[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Stride-1 average pooling along rows of an `[L×d]` tensor. Each row
    /// averages the in-range, unmasked rows within `window/2` of it; the
    /// divisor is the number of such rows, so edges are not biased toward zero.
    pub fn avg_pool_1d(&mut self, x: Var, window: usize, mask: Option<&[bool]>) -> Result<Var> {
        if window.is_multiple_of(2) {
            return Err(Error::config(format!("pooling window must be odd, got {window}")));
        }
        let vx = self.value(x);
        let (len, d) = (vx.rows(), vx.cols());
        if let Some(m) = mask {
            if m.len() != len {
                return Err(Error::Shape {
                    op: "avg_pool_1d",
                    lhs: vx.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let mut out = vec![0.0; vx.len()];
        for i in 0..len {
            let mut count = 0usize;
            let dst = &mut out[i * d..(i + 1) * d];
            for j in pool_neighbours(i, len, window, mask) {
                count += 1;
                for (o, v) in dst.iter_mut().zip(vx.row(j)) {
                    *o += v;
                }
            }
            if count > 0 {
                let inv = 1.0 / count as f64;
                dst.iter_mut().for_each(|o| *o *= inv);
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(
            t,
            Op::AvgPool {
                x,
                window,
                mask: mask.map(<[bool]>::to_vec),
            },
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        if len == 0 || start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: va.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = va.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::SliceCols { a, start }, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a).slice_rows(start, len)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::SliceRows { a, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows || self.shape(p).len() != 2) {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: self.shape(parts[0]).to_vec(),
                rhs: parts.iter().map(|&p| self.value(p).rows()).collect(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let rg = self.rg(parts);
        self.push(t, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: self.shape(parts[0]).to_vec(),
                rhs: parts.iter().map(|&p| self.value(p).cols()).collect(),
            });
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols;
        let t = Tensor::new(vec![rows, cols], out)?;
        let rg = self.rg(parts);
        self.push(t, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// `[r×2n] -> [r×n]`, averaging column `j` with column `j + n`.
    pub fn fold_halves_mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        if !cols.is_multiple_of(2) {
            return Err(Error::Shape {
                op: "fold_halves_mean",
                lhs: va.shape().to_vec(),
                rhs: vec![2],
            });
        }
        let n = cols / 2;
        let rows = va.rows();
        let mut out = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let src = va.row(r);
            out.extend((0..n).map(|j| 0.5 * (src[j] + src[j + n])));
        }
        let t = Tensor::new(vec![rows, n], out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::FoldHalvesMean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let s = va.data().iter().sum::<f64>() / va.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Picks one element (row-major flat index) as a scalar.
    pub fn index(&mut self, a: Var, flat: usize) -> Result<Var> {
        let va = self.value(a);
        if flat >= va.len() {
            return Err(Error::Shape {
                op: "index",
                lhs: va.shape().to_vec(),
                rhs: vec![flat],
            });
        }
        let s = va.data()[flat];
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Index { a, flat }, rg)
    }

    /// Inverted dropout: surviving entries are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        check_rate(p)?;
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    /// Stochastic depth for one sample: the whole branch is zeroed with
    /// probability `p`, otherwise scaled by `1/(1-p)`.
    pub fn drop_path<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        check_rate(p)?;
        if p == 0.0 {
            return Ok(a);
        }
        let factor = if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) };
        self.scale(a, factor)
    }

    /// Accumulates gradients of the scalar `loss` into every node that
    /// requires them. May be called once per recorded graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape; call reset()".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(mut g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.grads[i] = Some(g);
                continue;
            }
            if self.corrupt == Some(self.nodes[i].op.name()) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot, &self.nodes);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // The op is moved out temporarily so its inputs can be borrowed while
        // gradient slots are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let sa = self.shape(*a).to_vec();
                let (m, k) = (sa[0], sa[1]);
                let n = g.len() / m;
                let (a, b, trans_b) = (*a, *b, *trans_b);
                self.acc(a, |ga, nodes| {
                    // dA = G · op(B)ᵀ
                    gemm(m, n, k, g, false, nodes[b.0].value.data(), !trans_b, ga, true);
                });
                self.acc(b, |gb, nodes| {
                    let a_data = nodes[a.0].value.data();
                    if trans_b {
                        // B is [n×k]: dB = Gᵀ · A
                        gemm(n, m, k, g, true, a_data, false, gb, true);
                    } else {
                        // dB = Aᵀ · G
                        gemm(k, m, n, a_data, true, g, false, gb, true);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, |ga, _| add_into(ga, g));
                self.acc(*b, |gb, _| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |ga, _| add_into(ga, g));
                self.acc(*b, |gb, _| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga, nodes| {
                    let vb = nodes[b.0].value.data();
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(vb) {
                        *x += y * z;
                    }
                });
                self.acc(b, |gb, nodes| {
                    let va = nodes[a.0].value.data();
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(va) {
                        *x += y * z;
                    }
                });
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga, nodes| {
                    let vb = nodes[b.0].value.data();
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(vb) {
                        *x += y / z;
                    }
                });
                self.acc(b, |gb, nodes| {
                    let va = nodes[a.0].value.data();
                    let vb = nodes[b.0].value.data();
                    for (idx, x) in gb.iter_mut().enumerate() {
                        *x -= g[idx] * va[idx] / (vb[idx] * vb[idx]);
                    }
                });
            }
            Op::AddRow { a, row } => {
                self.acc(*a, |ga, _| add_into(ga, g));
                self.acc(*row, |gr, _| {
                    let cols = gr.len();
                    for (idx, y) in g.iter().enumerate() {
                        gr[idx % cols] += y;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::AddScalar(a) => self.acc(*a, |ga, _| add_into(ga, g)),
            Op::MulConst(a, c) => {
                self.acc(*a, |ga, _| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(c) {
                        *x += y * z;
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                self.acc(a, |ga, nodes| {
                    let va = nodes[a.0].value.data();
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[i].value.data().to_vec();
                self.acc(*a, |ga, _| {
                    for ((x, y), s) in ga.iter_mut().zip(g).zip(&out) {
                        *x += y * s * (1.0 - s);
                    }
                });
            }
            Op::Softplus(a) => {
                let a = *a;
                self.acc(a, |ga, nodes| {
                    let va = nodes[a.0].value.data();
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(va) {
                        *x += y * sigmoid(*v);
                    }
                });
            }
            Op::Log(a) => {
                let a = *a;
                self.acc(a, |ga, nodes| {
                    let va = nodes[a.0].value.data();
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(va) {
                        *x += y / v;
                    }
                });
            }
            Op::Abs(a) => {
                let a = *a;
                self.acc(a, |ga, nodes| {
                    let va = nodes[a.0].value.data();
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += y;
                        } else if *v < 0.0 {
                            *x -= y;
                        }
                    }
                });
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(op, Op::Min(..));
                let (a, b) = (*a, *b);
                let va = self.value(a).data().to_vec();
                let vb = self.value(b).data().to_vec();
                // ties route the gradient to the first operand
                let pick_a: Vec<bool> = va
                    .iter()
                    .zip(&vb)
                    .map(|(x, y)| if is_min { x <= y } else { x >= y })
                    .collect();
                self.acc(a, |ga, _| {
                    for (idx, x) in ga.iter_mut().enumerate() {
                        if pick_a[idx] {
                            *x += g[idx];
                        }
                    }
                });
                self.acc(b, |gb, _| {
                    for (idx, x) in gb.iter_mut().enumerate() {
                        if !pick_a[idx] {
                            *x += g[idx];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let out = &self.nodes[i].value;
                let cols = out.cols();
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), d) in out.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..cols {
                        d[j] = y[j] * (gr[j] - dot);
                    }
                }
                self.acc(*a, |ga, _| add_into(ga, &dx));
            }
            Op::LogSoftmax(a) => {
                let out = &self.nodes[i].value;
                let cols = out.cols();
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), d) in out.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let gs: f64 = gr.iter().sum();
                    for j in 0..cols {
                        d[j] = gr[j] - y[j].exp() * gs;
                    }
                }
                self.acc(*a, |ga, _| add_into(ga, &dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*gamma).len();
                let gam = self.value(*gamma).data().to_vec();
                self.acc(*gamma, |gg, _| {
                    for (idx, y) in g.iter().enumerate() {
                        gg[idx % d] += y * xhat[idx];
                    }
                });
                self.acc(*beta, |gb, _| {
                    for (idx, y) in g.iter().enumerate() {
                        gb[idx % d] += y;
                    }
                });
                self.acc(*x, |gx, _| {
                    let inv_d = 1.0 / d as f64;
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let h = &xhat[r * d..(r + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            m1 += dh;
                            m2 += dh * h[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            gx[r * d + j] += rs * (dh - m1 - h[j] * m2);
                        }
                    }
                });
            }
            Op::AvgPool { x, window, mask } => {
                let shape = self.shape(*x).to_vec();
                let (len, d) = (shape[0], shape[shape.len() - 1]);
                let window = *window;
                self.acc(*x, |gx, _| {
                    let m = mask.as_deref();
                    for r in 0..len {
                        let count = pool_neighbours(r, len, window, m).count();
                        if count == 0 {
                            continue;
                        }
                        let inv = 1.0 / count as f64;
                        for j in pool_neighbours(r, len, window, m) {
                            for c in 0..d {
                                gx[j * d + c] += g[r * d + c] * inv;
                            }
                        }
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let cols = self.value(*a).cols();
                let width = self.nodes[i].value.cols();
                let start = *start;
                self.acc(*a, |ga, _| {
                    for (r, gr) in g.chunks(width).enumerate() {
                        for (j, y) in gr.iter().enumerate() {
                            ga[r * cols + start + j] += y;
                        }
                    }
                });
            }
            Op::SliceRows { a, start } => {
                let cols = self.value(*a).cols();
                let off = start * cols;
                self.acc(*a, |ga, _| add_into(&mut ga[off..off + g.len()], g));
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(p, |gp, _| {
                        for (r, chunk) in gp.chunks_mut(w).enumerate() {
                            add_into(chunk, &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(p, |gp, _| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::FoldHalvesMean(a) => {
                let n = self.nodes[i].value.cols();
                self.acc(*a, |ga, _| {
                    for (r, gr) in g.chunks(n).enumerate() {
                        for (j, y) in gr.iter().enumerate() {
                            ga[r * 2 * n + j] += 0.5 * y;
                            ga[r * 2 * n + n + j] += 0.5 * y;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let y = g[0];
                self.acc(*a, |ga, _| ga.iter_mut().for_each(|x| *x += y));
            }
            Op::Mean(a) => {
                let y = g[0] / self.value(*a).len() as f64;
                self.acc(*a, |ga, _| ga.iter_mut().for_each(|x| *x += y));
            }
            Op::Index { a, flat } => {
                let flat = *flat;
                self.acc(*a, |ga, _| ga[flat] += g[0]);
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("drop rate must lie in [0, 1), got {p}")));
    }
    Ok(())
}
