//! Define-by-run reverse-mode differentiation over dense rank-2 tensors.
//!
//! A [`Tape`] records every operation executed during one forward pass.
//! Nodes are appended in execution order, so the node list is already a
//! topological order and [`Tape::backward`] simply walks it in reverse.
//! Parameters are borrowed from a [`ParamStore`] rather than copied; their
//! gradients are collected into [`Gradients::params`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::diff::params::{ParamId, ParamStore};
use crate::diff::sparse::Csr;
use crate::diff::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower clamp for probabilities entering the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// Tanh approximation `0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))`.
    Gelu,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "gelu" => Ok(Self::Gelu),
            "relu" => Ok(Self::Relu),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Self::Tanh => x.tanh(),
            Self::Sigmoid => sigmoid(x),
            Self::Gelu => {
                let half = S::lit(0.5);
                let u = S::lit(GELU_K) * (x + S::lit(GELU_C) * x * x * x);
                half * x * (S::one() + u.tanh())
            }
            Self::Relu => x.max(S::zero()),
        }
    }

    /// Derivative given the input `x` and the already computed output `y`.
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Self::Tanh => S::one() - y * y,
            Self::Sigmoid => y * (S::one() - y),
            Self::Gelu => {
                let half = S::lit(0.5);
                let u = S::lit(GELU_K) * (x + S::lit(GELU_C) * x * x * x);
                let t = u.tanh();
                let du = S::lit(GELU_K) * (S::one() + S::lit(3.0 * GELU_C) * x * x);
                half * (S::one() + t) + half * x * (S::one() - t * t) * du
            }
            Self::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    // log(1 + e^x) without overflow
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Value<S> {
    Owned(Tensor<S>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op<S> {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    SparseMatMul(Arc<Csr<S>>, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    RSubScalar(Var),
    ScaleBy(Var, Var),
    Act(Var, Activation),
    Softplus(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Row { x: Var, row: usize },
    Sum(Var),
    Bce { p: Var, targets: Vec<S>, mask: Vec<bool> },
    Dropout { x: Var, scale: Vec<S> },
    MaxRows { x: Var, argmax: Vec<usize> },
    Gather { table: Var, ids: Vec<usize> },
    Unfold { x: Var, width: usize },
    RowNormalize(Var),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::SparseMatMul(..) => "sparse_matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::RSubScalar(_) => "rsub_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::Act(_, Activation::Tanh) => "tanh",
            Op::Act(_, Activation::Sigmoid) => "sigmoid",
            Op::Act(_, Activation::Gelu) => "gelu",
            Op::Act(_, Activation::Relu) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Softmax(_) => "softmax_rows",
            Op::Concat(_) => "concat",
            Op::StackRows(_) => "stack_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Row { .. } => "row",
            Op::Sum(_) => "sum",
            Op::Bce { .. } => "bce",
            Op::Dropout { .. } => "dropout",
            Op::MaxRows { .. } => "max_rows",
            Op::Gather { .. } => "gather",
            Op::Unfold { .. } => "unfold",
            Op::RowNormalize(_) => "row_normalize",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::ScaleBy(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::SparseMatMul(_, a)
            | Op::Scale(a, _)
            | Op::RSubScalar(a)
            | Op::Act(a, _)
            | Op::Softplus(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::RowNormalize(a) => vec![*a],
            Op::Concat(v) | Op::StackRows(v) => v.clone(),
            Op::SliceCols { x, .. }
            | Op::Row { x, .. }
            | Op::Dropout { x, .. }
            | Op::MaxRows { x, .. }
            | Op::Unfold { x, .. } => vec![*x],
            Op::Bce { p, .. } => vec![*p],
            Op::Gather { table, .. } => vec![*table],
        }
    }
}

struct Node<S> {
    value: Value<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// One executed operation as seen from outside the tape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapeEntry {
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    nodes: Vec<Option<Vec<S>>>,
    params: BTreeMap<ParamId, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to a node, `None` if no gradient
    /// reached it.
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[S]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

pub struct Tape<'p, S: Scalar> {
    store: Option<&'p ParamStore<S>>,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore<S>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
        }
    }

    /// Clears every recorded node. Handles from before the reset are invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entries(&self) -> Vec<TapeEntry> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| TapeEntry {
                op: n.op.name(),
                inputs: n.op.inputs().into_iter().map(|v| v.0).collect(),
                output: i,
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free differentiable input not backed by the parameter store.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Input,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("tape was created without a parameter store");
        let trainable = store.get(id).trainable;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Product of a constant sparse matrix and a node.
    pub fn sparse_matmul(&mut self, lhs: Arc<Csr<S>>, x: Var) -> Result<Var> {
        let out = lhs.matmul(self.value(x))?;
        Ok(self.push(out, Op::SparseMatMul(lhs, x)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(Error::shape("add_row", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        let n = ta.cols();
        for r in 0..ta.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        debug_assert_eq!(out.cols(), n);
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| S::one() - x);
        self.push(out, Op::RSubScalar(a))
    }

    /// Multiplies every element of `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if !ts.is_scalar() {
            return Err(Error::shape("scale_by", self.value(a).shape(), ts.shape()));
        }
        let c = ts.item();
        let out = self.value(a).map(|x| x * c);
        Ok(self.push(out, Op::ScaleBy(a, s)))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).map(|x| kind.apply(x));
        self.push(out, Op::Act(a, kind))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax_rows(a, None)
    }

    /// Row-wise softmax. Columns where `mask[c]` is false get exactly zero
    /// weight and receive zero gradient.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if let Some(m) = mask {
            if m.len() != c {
                return Err(Error::shape("masked_softmax_rows", t.shape(), &[m.len()]));
            }
            if !m.iter().any(|&x| x) {
                return Err(Error::AllMasked);
            }
        }
        let valid = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = t.row(i);
            let max = (0..c)
                .filter(|&j| valid(j))
                .map(|j| row[j])
                .fold(S::neg_infinity(), S::max);
            let orow = out.row_mut(i);
            let mut total = S::zero();
            for j in 0..c {
                if valid(j) {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    total += e;
                }
            }
            for v in orow.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Concatenates along the column dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero parts".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::shape("concat", self.value(*first).shape(), self.value(*p).shape()));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero parts".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::shape("stack_rows", self.value(*first).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::StackRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if len == 0 || start + len > t.cols() {
            return Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{} out of range for {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![t.rows(), len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let t = self.value(x);
        if row >= t.rows() {
            return Err(Error::InvalidArgument(format!("row {row} out of range for {:?}", t.shape())));
        }
        let out = Tensor::row_vector(t.row(row).to_vec());
        Ok(self.push(out, Op::Row { x, row }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Binary cross-entropy summed over all elements.
    pub fn bce(&mut self, p: Var, targets: &[S]) -> Result<Var> {
        let mask = vec![true; targets.len()];
        self.bce_masked(p, targets, &mask)
    }

    /// Binary cross-entropy summed over the elements where `mask` is true.
    /// Unmasked elements contribute nothing and receive exactly zero gradient.
    pub fn bce_masked(&mut self, p: Var, targets: &[S], mask: &[bool]) -> Result<Var> {
        let t = self.value(p);
        if t.len() != targets.len() || t.len() != mask.len() {
            return Err(Error::shape("bce", t.shape(), &[targets.len()]));
        }
        let eps = S::lit(BCE_EPS);
        let hi = S::one() - eps;
        let mut loss = S::zero();
        for ((&pv, &y), &m) in t.data().iter().zip(targets).zip(mask) {
            if !m {
                continue;
            }
            let pc = pv.max(eps).min(hi);
            loss -= y * pc.ln() + (S::one() - y) * (S::one() - pc).ln();
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = S::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let scale: Vec<S> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, scale }))
    }

    /// Column-wise maximum over rows, producing `1 × c`. Ties resolve to the
    /// first row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut argmax = vec![0; c];
        let mut best: Vec<S> = t.row(0).to_vec();
        for i in 1..r {
            for (j, &v) in t.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(Tensor::row_vector(best), Op::MaxRows { x, argmax })
    }

    /// Selects rows of `table` by index, producing `ids.len() × d`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::InvalidArgument("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!("row id {bad} out of range for {:?}", t.shape())));
        }
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Sliding windows for a 1-D convolution: row `t` of the `l × (width·d)`
    /// output is `x[t], x[t+1], …, x[t+width-1]`, zero-padded past the end.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        if width == 0 {
            return Err(Error::InvalidArgument("unfold width must be positive".into()));
        }
        let t = self.value(x);
        let (l, d) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(l, width * d);
        for pos in 0..l {
            let orow = out.row_mut(pos);
            for s in 0..width {
                if pos + s < l {
                    orow[s * d..(s + 1) * d].copy_from_slice(t.row(pos + s));
                }
            }
        }
        Ok(self.push(out, Op::Unfold { x, width }))
    }

    /// Divides every row by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let s: S = t.row(r).iter().copied().sum();
            if s <= S::zero() || !s.is_finite() {
                return Err(Error::DegenerateOperator { row: r, sum: s.as_f64() });
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        Ok(self.push(out, Op::RowNormalize(a)))
    }

    /// Reverse pass from a scalar node. The tape is left intact, so calling
    /// this twice and accumulating both results doubles the gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: BTreeMap<ParamId, Vec<S>> = BTreeMap::new();
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        params: &mut BTreeMap<ParamId, Vec<S>>,
    ) {
        let node = &self.nodes[i];
        let out = self.value(Var(i));
        let one = S::one();
        match &node.op {
            Op::Constant | Op::Input => {}
            Op::Param(id) => {
                let buf = params.entry(*id).or_insert_with(|| vec![S::zero(); g.len()]);
                add_into(buf, g);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    matmul_nt_into(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    matmul_tn_into(ta.data(), g, gb, k, m, n);
                }
            }
            Op::SparseMatMul(lhs, x) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    lhs.transpose_matmul_into(g, out.cols(), gx);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    // out is r×c, input is c×r
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(va) {
                        *d += s * x;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                let n = out.cols();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c);
                }
            }
            Op::RSubScalar(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::ScaleBy(a, s) => {
                let c = self.value(*s).item();
                let va = self.value(*a).data();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * c);
                }
                if let Some(gs) = self.grad_buf(grads, *s) {
                    let dot: S = g.iter().zip(va).map(|(&gv, &x)| gv * x).sum();
                    gs[0] += dot;
                }
            }
            Op::Act(a, kind) => {
                let x = self.value(*a).data();
                let y = out.data();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (j, d) in ga.iter_mut().enumerate() {
                        *d += g[j] * kind.derivative(x[j], y[j]);
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (j, d) in ga.iter_mut().enumerate() {
                        *d += g[j] * sigmoid(x[j]);
                    }
                }
            }
            Op::Softmax(a) => {
                let c = out.cols();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: S = y.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            ga[r * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.grad_buf(grads, *p) {
                        for r in 0..out.rows() {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(gp) = self.grad_buf(grads, *p) {
                        add_into(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let src_cols = self.value(*x).cols();
                let w = out.cols();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for r in 0..out.rows() {
                        add_into(&mut gx[r * src_cols + start..r * src_cols + start + w], &g[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::Row { x, row } => {
                let w = out.cols();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    add_into(&mut gx[row * w..(row + 1) * w], g);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Bce { p, targets, mask } => {
                let eps = S::lit(BCE_EPS);
                let hi = one - eps;
                let pv = self.value(*p).data();
                if let Some(gp) = self.grad_buf(grads, *p) {
                    for j in 0..pv.len() {
                        let x = pv[j];
                        if !mask[j] || x < eps || x > hi {
                            continue;
                        }
                        gp[j] += g[0] * (x - targets[j]) / (x * (one - x));
                    }
                }
            }
            Op::Dropout { x, scale } => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((d, &s), &k) in gx.iter_mut().zip(g).zip(scale) {
                        *d += s * k;
                    }
                }
            }
            Op::MaxRows { x, argmax } => {
                let c = out.cols();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * c + j] += g[j];
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = out.cols();
                if let Some(gt) = self.grad_buf(grads, *table) {
                    for (t, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[t * d..(t + 1) * d]);
                    }
                }
            }
            Op::Unfold { x, width } => {
                let (l, d) = self.shape(*x);
                let wd = width * d;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for pos in 0..l {
                        for s in 0..*width {
                            if pos + s < l {
                                add_into(
                                    &mut gx[(pos + s) * d..(pos + s + 1) * d],
                                    &g[pos * wd + s * d..pos * wd + (s + 1) * d],
                                );
                            }
                        }
                    }
                }
            }
            Op::RowNormalize(a) => {
                let src = self.value(*a);
                let c = out.cols();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for r in 0..out.rows() {
                        let s: S = src.row(r).iter().copied().sum();
                        let y = out.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: S = y.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            ga[r * c + j] += (gr[j] - dot) / s;
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer of an input node, allocated on first use; `None` when
    /// the node does not participate in differentiation.
    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut [S]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]).as_mut_slice())
    }
}

#[inline]
fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<S: Scalar> fmt::Debug for Tape<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

