//! Tape-recording expression graph.
//!
//! Every op appends a node holding its primal value. When gradient mode is on
//! the node also records its inputs, so node ids are a topological order and a
//! single reverse sweep visits each node exactly once.

use std::sync::Arc;

use crate::tensor::gemm;
use crate::{AdError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    Silu(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    Hypot(Var, Var),
    Norm(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, len: usize },
    SmoothMax(Var, Var, f64),
    SmoothMin(Var, Var, f64),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Silu(..) => "silu",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Hypot(..) => "hypot",
            Op::Norm(..) => "norm",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::SmoothMax(..) => "smooth_max",
            Op::SmoothMin(..) => "smooth_min",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// An expression graph; records a tape when gradient mode is on.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `w * ln(exp(a/w) + exp(b/w))`, evaluated without overflow.
pub fn smooth_max(a: f64, b: f64, w: f64) -> f64 {
    let m = a.max(b);
    let gap = (a - b).abs() / w;
    // the correction is below rounding of any useful magnitude past this
    if gap > 40.0 {
        return m;
    }
    m + w * (-gap).exp().ln_1p()
}

pub fn smooth_min(a: f64, b: f64, w: f64) -> f64 {
    -smooth_max(-a, -b, w)
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

impl Graph {
    /// A graph that records the tape for [`Graph::backward`].
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true }
    }

    /// A graph that only computes primal values.
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf whose gradient can be queried after the backward pass.
    pub fn input(&mut self, value: impl Into<Tensor>) -> Var {
        self.push_unchecked(value.into(), Op::Leaf)
    }

    /// Adds a leaf that is treated as a constant; identical to `input` on the tape.
    pub fn constant(&mut self, value: impl Into<Tensor>) -> Var {
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, AdError> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        Ok(self.push_unchecked(value, op))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AdError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AdError> {
        self.same_shape(op.name(), a, b)?;
        let value = self.value(a).zip(self.value(b), f);
        self.push(value, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AdError> {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AdError> {
        self.scale(a, -1.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AdError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds a `[n]` bias to every row of a `[m, n]` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(AdError::ShapeMismatch {
                op: "add_row_bias",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let n = sa[1];
        let mut value = self.value(a).clone();
        let b = self.value(bias).data();
        for row in value.data_mut().chunks_mut(n.max(1)) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.push(value, Op::AddRowBias(a, bias))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AdError::InvalidTensor("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Silu(a), silu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Elementwise `sqrt(a^2 + b^2)`; the gradient at the origin is taken as zero.
    pub fn hypot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Hypot(a, b), |x, y| (x * x + y * y).sqrt())
    }

    /// Euclidean norm of all elements; the gradient at zero is taken as zero.
    pub fn norm(&mut self, a: Var) -> Result<Var, AdError> {
        let n = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::Norm(a))
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AdError> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(value, Op::Reshape(a))
    }

    /// Concatenates along the last axis. All leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let Some(&first) = parts.first() else {
            return Err(AdError::InvalidTensor("concat of zero tensors".into()));
        };
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(AdError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            width += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let t = self.value(src);
        let c = t.last_dim();
        if start + len > c {
            return Err(AdError::IndexOutOfRange { op: "slice", index: start + len, len: c });
        }
        let mut out = Vec::with_capacity(t.outer_len() * len);
        for r in 0..t.outer_len() {
            out.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Slice { src, start, len })
    }

    /// Elementwise log-sum-exp maximum with smoothing width `w`.
    pub fn smooth_max(&mut self, a: Var, b: Var, w: f64) -> Result<Var, AdError> {
        self.binary(a, b, Op::SmoothMax(a, b, w), |x, y| smooth_max(x, y, w))
    }

    pub fn smooth_min(&mut self, a: Var, b: Var, w: f64) -> Result<Var, AdError> {
        self.binary(a, b, Op::SmoothMin(a, b, w), |x, y| smooth_min(x, y, w))
    }

    /// `out[i] = a[idx[i]]` over the flattened input.
    pub fn gather(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, AdError> {
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            match src.get(i) {
                Some(&v) => out.push(v),
                None => return Err(AdError::IndexOutOfRange { op: "gather", index: i, len: src.len() }),
            }
        }
        self.push(Tensor::vector(out), Op::Gather(a, idx))
    }

    /// `out[idx[i]] += a[i]` into a zero vector of length `n`, in index order.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var, AdError> {
        let src = self.value(a).data();
        if src.len() != idx.len() {
            return Err(AdError::ShapeMismatch {
                op: "scatter_add",
                lhs: vec![src.len()],
                rhs: vec![idx.len()],
            });
        }
        let mut out = vec![0.0; n];
        for (&i, &v) in idx.iter().zip(src) {
            match out.get_mut(i) {
                Some(slot) => *slot += v,
                None => return Err(AdError::IndexOutOfRange { op: "scatter_add", index: i, len: n }),
            }
        }
        self.push(Tensor::vector(out), Op::ScatterAdd(a, idx))
    }

    /// Reverse sweep from a scalar output. Consumes the tape.
    pub fn backward(self, output: Var) -> Result<Gradients, AdError> {
        let shape = self.shape(output).to_vec();
        if !self.value(output).is_scalar() {
            return Err(AdError::NonScalarOutput(shape));
        }
        let seed = Tensor::filled(&shape, 1.0);
        self.vjp(&[(output, seed)])
    }

    /// Vector-Jacobian product: propagates the given cotangents back to every
    /// leaf. Consumes the tape.
    pub fn vjp(self, seeds: &[(Var, Tensor)]) -> Result<Gradients, AdError> {
        if !self.record {
            return Err(AdError::NoTape);
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        for (v, seed) in seeds {
            if seed.shape() != self.shape(*v) {
                return Err(AdError::ShapeMismatch {
                    op: "vjp seed",
                    lhs: self.shape(*v).to_vec(),
                    rhs: seed.shape().to_vec(),
                });
            }
            accumulate(&mut grads, *v, seed.clone());
        }
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
        }
        let shapes = self.nodes.into_iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), AdError> {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut put = |v: Var, t: Tensor| -> Result<(), AdError> {
            if !t.all_finite() {
                return Err(AdError::NonFinite { op: node.op.name() });
            }
            accumulate(grads, v, t);
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                put(*a, g.clone())?;
                put(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                put(*a, g.clone())?;
                put(*b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                put(*a, g.zip(val(*b), |x, y| x * y))?;
                put(*b, g.zip(val(*a), |x, y| x * y))?;
            }
            Op::Div(a, b) => {
                put(*a, g.zip(val(*b), |x, y| x / y))?;
                let gb = g.zip(out, |x, o| x * o).zip(val(*b), |x, y| -x / y);
                put(*b, gb)?;
            }
            Op::Scale(a, c) => put(*a, g.map(|x| x * c))?,
            Op::AddScalar(a) => put(*a, g.clone())?,
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, false);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, false);
                put(*a, Tensor::new(vec![m, k], ga)?)?;
                put(*b, Tensor::new(vec![k, n], gb)?)?;
            }
            Op::AddRowBias(a, bias) => {
                let n = val(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n.max(1)) {
                    for (s, x) in gb.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                put(*a, g.clone())?;
                put(*bias, Tensor::vector(gb))?;
            }
            Op::Sum(a) => put(*a, Tensor::filled(val(*a).shape(), g.data()[0]))?,
            Op::Mean(a) => {
                let t = val(*a);
                put(*a, Tensor::filled(t.shape(), g.data()[0] / t.len() as f64))?;
            }
            Op::Exp(a) => put(*a, g.zip(out, |x, o| x * o))?,
            Op::Log(a) => put(*a, g.zip(val(*a), |x, y| x / y))?,
            Op::Tanh(a) => put(*a, g.zip(out, |x, o| x * (1.0 - o * o)))?,
            Op::Sin(a) => put(*a, g.zip(val(*a), |x, y| x * y.cos()))?,
            Op::Cos(a) => put(*a, g.zip(val(*a), |x, y| -x * y.sin()))?,
            Op::Silu(a) => put(
                *a,
                g.zip(val(*a), |x, y| {
                    let s = sigmoid(y);
                    x * s * (1.0 + y * (1.0 - s))
                }),
            )?,
            Op::Softplus(a) => put(*a, g.zip(val(*a), |x, y| x * sigmoid(y)))?,
            Op::Square(a) => put(*a, g.zip(val(*a), |x, y| 2.0 * x * y))?,
            Op::Sqrt(a) => put(*a, g.zip(out, |x, o| 0.5 * x / o))?,
            Op::Hypot(a, b) => {
                let safe = |x: f64, o: f64| if o == 0.0 { 0.0 } else { x / o };
                let ga = val(*a).zip(out, safe).zip(g, |r, x| r * x);
                let gb = val(*b).zip(out, safe).zip(g, |r, x| r * x);
                put(*a, ga)?;
                put(*b, gb)?;
            }
            Op::Norm(a) => {
                let o = out.data()[0];
                let s = g.data()[0];
                let ga = if o == 0.0 { val(*a).map(|_| 0.0) } else { val(*a).map(|x| s * x / o) };
                put(*a, ga)?;
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                put(*a, g.clone().reshape(shape)?)?;
            }
            Op::Concat(parts) => {
                let width = out.last_dim();
                let rows = out.outer_len();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.data()[r * width + offset..r * width + offset + w]);
                    }
                    put(p, Tensor::new(val(p).shape().to_vec(), gp)?)?;
                    offset += w;
                }
            }
            Op::Slice { src, start, len } => {
                let t = val(*src);
                let c = t.last_dim();
                let mut gs = Tensor::zeros(t.shape());
                for r in 0..t.outer_len() {
                    gs.data_mut()[r * c + start..r * c + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                put(*src, gs)?;
            }
            Op::SmoothMax(a, b, w) => {
                let s = val(*a).zip(val(*b), |x, y| sigmoid((x - y) / w));
                put(*a, g.zip(&s, |x, s| x * s))?;
                put(*b, g.zip(&s, |x, s| x * (1.0 - s)))?;
            }
            Op::SmoothMin(a, b, w) => {
                let s = val(*a).zip(val(*b), |x, y| sigmoid((y - x) / w));
                put(*a, g.zip(&s, |x, s| x * s))?;
                put(*b, g.zip(&s, |x, s| x * (1.0 - s)))?;
            }
            Op::Gather(a, idx) => {
                let mut ga = Tensor::zeros(val(*a).shape());
                let d = ga.data_mut();
                for (&i, &x) in idx.iter().zip(g.data()) {
                    d[i] += x;
                }
                put(*a, ga)?;
            }
            Op::ScatterAdd(a, idx) => {
                let gd = g.data();
                put(*a, Tensor::vector(idx.iter().map(|&i| gd[i]).collect()))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Gradients of a backward pass, keyed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
