//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Operands are
//! referred to by [`Var`] handles (indices into the tape). Calling
//! [`Graph::backward`] on a scalar node replays the tape in reverse and
//! accumulates gradients for every node that transitively depends on a leaf
//! created with `requires_grad`.
//!
//! There is no implicit broadcasting. Binary elementwise operations require
//! identical shapes; row/column expansion is explicit through
//! [`Graph::broadcast_rows`] and [`Graph::broadcast_cols`], and a scalar node
//! may scale a tensor through [`Graph::scalar_mul`].
//!
//! ```
//! use paeff_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]).with_grad());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq, None).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

use crate::error::{Error, Result};

/// Below this the zero-vector guards of `norm2`, `sqrt` and the ratio maps apply.
pub const ZERO_GUARD: f64 = 1e-12;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Marks the tensor as a differentiable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Ln,
    /// `sqrt(max(x, 0))`, gradient zero at and below the guard.
    Sqrt,
    Artanh,
    Abs,
    /// `tanh(x) / x` with the limit 1 at the origin.
    TanhRatio,
    /// `artanh(x) / x` with the limit 1 at the origin.
    ArtanhRatio,
    Scale(f64),
    AddScalar(f64),
    ClampMax(f64),
    ClampMin(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Unary(Var, Unary),
    ScalarMul(Var, Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Norm2(Var, Option<usize>),
    BroadcastRows(Var),
    BroadcastCols(Var),
    ConcatCols(Var, Var),
    RowClip(Var, f64),
    LogSoftmaxNll {
        logits: Var,
        targets: Vec<usize>,
        softmax: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward computation and replays it backwards.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// Rescales `row` (current norm `n`) so its recomputed norm never exceeds `max_norm`.
pub(crate) fn clip_row_to(row: &mut [f64], n: f64, max_norm: f64) {
    let orig = row.to_vec();
    let mut k = max_norm / n;
    loop {
        for (v, o) in row.iter_mut().zip(&orig) {
            *v = o * k;
        }
        if row.iter().map(|v| v * v).sum::<f64>().sqrt() <= max_norm {
            return;
        }
        k *= 1.0 - f64::EPSILON;
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => vec![],
        Some(a) => shape
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != a)
            .map(|(_, d)| *d)
            .collect(),
    }
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.max(0.0).sqrt(),
            Unary::Artanh => x.atanh(),
            Unary::Abs => x.abs(),
            Unary::TanhRatio => {
                if x.abs() < 1e-6 {
                    1.0 - x * x / 3.0
                } else {
                    x.tanh() / x
                }
            }
            Unary::ArtanhRatio => {
                if x.abs() < 1e-6 {
                    1.0 + x * x / 3.0
                } else {
                    x.atanh() / x
                }
            }
            Unary::Scale(s) => s * x,
            Unary::AddScalar(s) => x + s,
            Unary::ClampMax(m) => x.min(m),
            Unary::ClampMin(m) => x.max(m),
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sqrt => {
                if y > ZERO_GUARD {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Artanh => 1.0 / (1.0 - x * x),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::TanhRatio => {
                if x.abs() < 1e-6 {
                    -2.0 * x / 3.0
                } else {
                    let t = x.tanh();
                    ((1.0 - t * t) * x - t) / (x * x)
                }
            }
            Unary::ArtanhRatio => {
                if x.abs() < 1e-6 {
                    2.0 * x / 3.0
                } else {
                    (x / (1.0 - x * x) - x.atanh()) / (x * x)
                }
            }
            Unary::Scale(s) => s,
            Unary::AddScalar(_) => 1.0,
            Unary::ClampMax(m) => {
                if x < m {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::ClampMin(m) => {
                if x > m {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. The tensor's `requires_grad` flag is honoured.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t.shape, t.data, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Snapshot of a node as a standalone tensor, including its gradient if one was computed.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: n.requires_grad,
            grad: self.grads.get(v.0).cloned().flatten(),
        }
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn rank2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    // ----- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2(a, "matmul lhs")?;
        let (k2, n) = self.rank2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions of [{m}x{k}] and [{k2}x{n}] disagree"
            )));
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.rank2(a, "transpose")?;
        let out = transpose_raw(self.value(a), m, n);
        let rg = self.rg(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() {
            return Err(Error::dim(format!(
                "reshape: cannot view {:?} as {:?}",
                self.shape(a),
                shape
            )));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::Reshape(a), rg))
    }

    // ----- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn unary(&mut self, a: Var, op: Unary) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| op.apply(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, Op::Unary(a, op), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn artanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Artanh)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Unary::Scale(s))
    }
    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Unary::AddScalar(s))
    }
    pub fn clamp_max(&mut self, a: Var, m: f64) -> Var {
        self.unary(a, Unary::ClampMax(m))
    }
    pub fn clamp_min(&mut self, a: Var, m: f64) -> Var {
        self.unary(a, Unary::ClampMin(m))
    }

    /// Multiplies every element of `t` by the single value held in `s`.
    pub fn scalar_mul(&mut self, s: Var, t: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(format!(
                "scalar_mul: left operand must be scalar, got shape {:?}",
                self.shape(s)
            )));
        }
        let k = self.value(s)[0];
        let out: Vec<f64> = self.value(t).iter().map(|x| k * x).collect();
        let shape = self.shape(t).to_vec();
        let rg = self.rg(s) || self.rg(t);
        Ok(self.push(shape, out, Op::ScalarMul(s, t), rg))
    }

    // ----- reductions -----------------------------------------------------

    fn check_axis(&self, a: Var, axis: Option<usize>, what: &str) -> Result<()> {
        if let Some(ax) = axis {
            if ax >= self.shape(a).len() {
                return Err(Error::dim(format!(
                    "{what}: axis {ax} out of range for shape {:?}",
                    self.shape(a)
                )));
            }
        }
        Ok(())
    }

    fn reduce(&self, a: Var, axis: Option<usize>, f: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Vec<f64> {
        let x = self.value(a);
        match axis {
            None => vec![f(&mut x.iter().copied())],
            Some(ax) => {
                let (outer, len, inner) = axis_split(self.shape(a), ax);
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut it = (0..len).map(|l| x[(o * len + l) * inner + i]);
                        out.push(f(&mut it));
                    }
                }
                out
            }
        }
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "sum")?;
        let out = self.reduce(a, axis, |it: &mut dyn Iterator<Item = f64>| it.sum());
        let shape = reduced_shape(self.shape(a), axis);
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::Sum(a, axis), rg))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "mean")?;
        let count = match axis {
            None => self.value(a).len(),
            Some(ax) => self.shape(a)[ax],
        } as f64;
        let out = self.reduce(a, axis, |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>() / count);
        let shape = reduced_shape(self.shape(a), axis);
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::Mean(a, axis), rg))
    }

    /// Euclidean norm, over everything or along one axis.
    pub fn norm2(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "norm2")?;
        let out = self.reduce(a, axis, |it: &mut dyn Iterator<Item = f64>| it.map(|x| x * x).sum::<f64>().sqrt());
        let shape = reduced_shape(self.shape(a), axis);
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::Norm2(a, axis), rg))
    }

    // ----- shape plumbing -------------------------------------------------

    /// Repeats a length-`D` vector as the rows of an `[n x D]` matrix.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let d = match self.shape(v) {
            [d] => *d,
            s => return Err(Error::dim(format!("broadcast_rows: expected a vector, got {s:?}"))),
        };
        let src = self.value(v);
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        let rg = self.rg(v);
        Ok(self.push(vec![n, d], out, Op::BroadcastRows(v), rg))
    }

    /// Repeats a length-`B` vector as the columns of a `[B x n]` matrix.
    pub fn broadcast_cols(&mut self, v: Var, n: usize) -> Result<Var> {
        let b = match self.shape(v) {
            [b] => *b,
            s => return Err(Error::dim(format!("broadcast_cols: expected a vector, got {s:?}"))),
        };
        let src = self.value(v);
        let mut out = Vec::with_capacity(n * b);
        for x in src {
            out.extend(std::iter::repeat_n(*x, n));
        }
        let rg = self.rg(v);
        Ok(self.push(vec![b, n], out, Op::BroadcastCols(v), rg))
    }

    /// `[B x m] ++ [B x n] -> [B x (m+n)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.rank2(a, "concat_cols lhs")?;
        let (rb, cb) = self.rank2(b, "concat_cols rhs")?;
        if ra != rb {
            return Err(Error::dim(format!(
                "concat_cols: row counts of [{ra}x{ca}] and [{rb}x{cb}] differ"
            )));
        }
        let (xa, xb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&xa[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&xb[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![ra, ca + cb], out, Op::ConcatCols(a, b), rg))
    }

    /// Rescales each row (or the single vector) whose norm exceeds `max_norm` onto that norm.
    pub fn row_clip(&mut self, a: Var, max_norm: f64) -> Result<Var> {
        let (rows, cols) = match self.shape(a) {
            [d] => (1, *d),
            [r, c] => (*r, *c),
            s => return Err(Error::dim(format!("row_clip: expected rank 1 or 2, got {s:?}"))),
        };
        let x = self.value(a);
        let mut out = x.to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > max_norm {
                clip_row_to(row, n, max_norm);
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::RowClip(a, max_norm), rg))
    }

    // ----- fused loss -----------------------------------------------------

    /// Mean negative log-likelihood of `targets` under a row-wise softmax of `logits`.
    pub fn log_softmax_nll(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.rank2(logits, "log_softmax_nll")?;
        if targets.len() != b {
            return Err(Error::dim(format!(
                "log_softmax_nll: {} targets for {b} rows",
                targets.len()
            )));
        }
        if let Some((i, t)) = targets.iter().enumerate().find(|(_, t)| **t >= c) {
            return Err(Error::Index(format!(
                "log_softmax_nll: target {t} at row {i} out of range for {c} classes"
            )));
        }
        let x = self.value(logits);
        let mut softmax = vec![0.0; b * c];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &x[r * c..(r + 1) * c];
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
            // mass outside the max entry, so ln(z) = ln_1p(rest) keeps precision
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != arg)
                .map(|(_, v)| (v - max).exp())
                .sum();
            let z = 1.0 + rest;
            for j in 0..c {
                softmax[r * c + j] = (row[j] - max).exp() / z;
            }
            loss += (max - row[targets[r]]) + rest.ln_1p();
        }
        loss /= b as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::LogSoftmaxNll {
                logits,
                targets: targets.to_vec(),
                softmax,
            },
            rg,
        ))
    }

    // ----- reverse pass ---------------------------------------------------

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Propagates d(root)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward already ran on this graph; call reset_grads first",
            ));
        }
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(up) = grads[idx].take() else { continue };
            self.backprop_node(idx, &up, &mut grads);
            grads[idx] = Some(up);
        }

        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if want(*a) {
                    // dA = up . B^T
                    let bt = transpose_raw(self.value(*b), k, n);
                    let da = matmul_raw(up, &bt, m, n, k);
                    accumulate(&mut grads[a.0], m * k, |g| add_into(g, &da));
                }
                if want(*b) {
                    // dB = A^T . up
                    let at = transpose_raw(self.value(*a), m, k);
                    let db = matmul_raw(&at, up, k, m, n);
                    accumulate(&mut grads[b.0], k * n, |g| add_into(g, &db));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let da = transpose_raw(up, n, m);
                accumulate(&mut grads[a.0], m * n, |g| add_into(g, &da));
            }
            Op::Reshape(a) => {
                accumulate(&mut grads[a.0], up.len(), |g| add_into(g, up));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if want(*v) {
                        accumulate(&mut grads[v.0], up.len(), |g| add_into(g, up));
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], up.len(), |g| add_into(g, up));
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], up.len(), |g| {
                        g.iter_mut().zip(up).for_each(|(g, u)| *g -= u)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                if want(*a) {
                    accumulate(&mut grads[a.0], up.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += up[i] * xb[i];
                        }
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], up.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += up[i] * xa[i];
                        }
                    });
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                if want(*a) {
                    accumulate(&mut grads[a.0], up.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += up[i] / xb[i];
                        }
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], up.len(), |g| {
                        for i in 0..g.len() {
                            g[i] -= up[i] * xa[i] / (xb[i] * xb[i]);
                        }
                    });
                }
            }
            Op::Unary(a, op) => {
                let x = self.value(*a);
                let y = &node.value;
                accumulate(&mut grads[a.0], up.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += up[i] * op.derivative(x[i], y[i]);
                    }
                });
            }
            Op::ScalarMul(s, t) => {
                let k = self.value(*s)[0];
                let xt = self.value(*t);
                if want(*s) {
                    let ds: f64 = up.iter().zip(xt).map(|(u, x)| u * x).sum();
                    accumulate(&mut grads[s.0], 1, |g| g[0] += ds);
                }
                if want(*t) {
                    accumulate(&mut grads[t.0], up.len(), |g| {
                        g.iter_mut().zip(up).for_each(|(g, u)| *g += k * u)
                    });
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let shape = self.shape(*a);
                let n = self.value(*a).len();
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), None) => 1.0 / n as f64,
                    (Op::Mean(..), Some(ax)) => 1.0 / shape[*ax] as f64,
                    _ => 1.0,
                };
                let spread = spread_reduced(shape, *axis, up);
                accumulate(&mut grads[a.0], n, |g| {
                    g.iter_mut().zip(&spread).for_each(|(g, u)| *g += scale * u)
                });
            }
            Op::Norm2(a, axis) => {
                let shape = self.shape(*a);
                let x = self.value(*a);
                let up_s = spread_reduced(shape, *axis, up);
                let norm_s = spread_reduced(shape, *axis, &node.value);
                accumulate(&mut grads[a.0], x.len(), |g| {
                    for i in 0..g.len() {
                        if norm_s[i] > ZERO_GUARD {
                            g[i] += up_s[i] * x[i] / norm_s[i];
                        }
                    }
                });
            }
            Op::BroadcastRows(v) => {
                let d = self.shape(*v)[0];
                accumulate(&mut grads[v.0], d, |g| {
                    for (i, u) in up.iter().enumerate() {
                        g[i % d] += u;
                    }
                });
            }
            Op::BroadcastCols(v) => {
                let b = self.shape(*v)[0];
                let n = node.shape[1];
                accumulate(&mut grads[v.0], b, |g| {
                    for (i, u) in up.iter().enumerate() {
                        g[i / n] += u;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = (self.shape(*a)[0], self.shape(*a)[1]);
                let cb = self.shape(*b)[1];
                let w = ca + cb;
                if want(*a) {
                    accumulate(&mut grads[a.0], r * ca, |g| {
                        for i in 0..r {
                            for j in 0..ca {
                                g[i * ca + j] += up[i * w + j];
                            }
                        }
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], r * cb, |g| {
                        for i in 0..r {
                            for j in 0..cb {
                                g[i * cb + j] += up[i * w + ca + j];
                            }
                        }
                    });
                }
            }
            Op::RowClip(a, max_norm) => {
                let x = self.value(*a);
                let cols = *self.shape(*a).last().unwrap();
                let rows = x.len() / cols.max(1);
                accumulate(&mut grads[a.0], x.len(), |g| {
                    for r in 0..rows {
                        let xr = &x[r * cols..(r + 1) * cols];
                        let ur = &up[r * cols..(r + 1) * cols];
                        let gr = &mut g[r * cols..(r + 1) * cols];
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n > *max_norm {
                            // d(m x/|x|) = (m/|x|) (I - x x^T/|x|^2)
                            let k = max_norm / n;
                            let dot: f64 = xr.iter().zip(ur).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                gr[j] += k * (ur[j] - xr[j] * dot / (n * n));
                            }
                        } else {
                            add_into(gr, ur);
                        }
                    }
                });
            }
            Op::LogSoftmaxNll {
                logits,
                targets,
                softmax,
            } => {
                let c = self.shape(*logits)[1];
                let b = targets.len();
                let k = up[0] / b as f64;
                accumulate(&mut grads[logits.0], b * c, |g| {
                    for r in 0..b {
                        for j in 0..c {
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            g[r * c + j] += k * (softmax[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

/// Expands a reduced buffer back to the full input shape.
fn spread_reduced(shape: &[usize], axis: Option<usize>, reduced: &[f64]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    match axis {
        None => vec![reduced[0]; n],
        Some(ax) => {
            let (outer, len, inner) = axis_split(shape, ax);
            let mut out = vec![0.0; n];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        out[(o * len + l) * inner + i] = reduced[o * inner + i];
                    }
                }
            }
            out
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
