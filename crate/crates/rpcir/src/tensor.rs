//! Minimal dense-matrix numeric core with a reverse-mode tape.
//!
//! Everything is a 2-D `Array` of f64; vectors are 1 x n rows and scalars are
//! 1 x 1. A `Tape` records one forward pass and is discarded after backward;
//! shapes vary per training example so there is no graph reuse.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Array {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Array {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Array) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn as_scalar(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    fn matmul(&self, other: &Array) -> Array {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Array::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    /// self^T @ other
    fn t_matmul(&self, other: &Array) -> Array {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Array::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    /// self @ other^T
    fn matmul_t(&self, other: &Array) -> Array {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Array::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.data[i * self.cols + k] * other.data[j * other.cols + k];
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Array) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MatMul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    ConcatCols(Vec<TensorId>),
    Relu(TensorId),
    Sigmoid(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Softplus(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    SoftmaxRows(TensorId),
    LogSumExpRow(TensorId),
    Dot(TensorId, TensorId),
    RowSelect(TensorId, usize),
    RowSlice(TensorId, usize, usize),
    ColSelect(TensorId, usize),
    MulScalar(TensorId, TensorId),
    MaskMul(TensorId, Array),
}

struct Node {
    value: Array,
    op: Op,
}

/// Reverse-mode tape: records one forward pass, then `backward` walks the
/// nodes in reverse to accumulate gradients.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn dim_err(op: &'static str, msg: String) -> Error {
    Error::Dimension { op, msg }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Array, op: Op) -> TensorId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        TensorId(nodes.len() - 1)
    }

    pub fn leaf(&self, value: Array) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, t: TensorId) -> Array {
        self.nodes.borrow()[t.0].value.clone()
    }

    pub fn value_scalar(&self, t: TensorId) -> f64 {
        let nodes = self.nodes.borrow();
        nodes[t.0].value.as_scalar()
    }

    pub fn shape(&self, t: TensorId) -> (usize, usize) {
        self.nodes.borrow()[t.0].value.shape()
    }

    fn binary_elementwise(
        &self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(TensorId, TensorId) -> Op,
    ) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if !va.same_shape(vb) {
                return Err(dim_err(
                    op_name,
                    format!("{:?} vs {:?}", va.shape(), vb.shape()),
                ));
            }
            Array {
                rows: va.rows,
                cols: va.cols,
                data: va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect(),
            }
        };
        Ok(self.push(value, mk(a, b)))
    }

    pub fn add(&self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn matmul(&self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.cols != vb.rows {
                return Err(dim_err(
                    "matmul",
                    format!("{:?} @ {:?}", va.shape(), vb.shape()),
                ));
            }
            va.matmul(vb)
        };
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn scale(&self, a: TensorId, c: f64) -> TensorId {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            Array {
                rows: va.rows,
                cols: va.cols,
                data: va.data.iter().map(|&x| x * c).collect(),
            }
        };
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&self, a: TensorId, c: f64) -> TensorId {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            Array {
                rows: va.rows,
                cols: va.cols,
                data: va.data.iter().map(|&x| x + c).collect(),
            }
        };
        self.push(value, Op::AddConst(a))
    }

    /// Horizontal concatenation of same-height blocks.
    pub fn concat_cols(&self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.rows;
            if parts.iter().any(|p| nodes[p.0].value.rows != rows) {
                return Err(dim_err("concat_cols", "mismatched row counts".into()));
            }
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols).sum();
            let mut out = Array::zeros(rows, cols);
            for r in 0..rows {
                let mut offset = 0;
                for p in parts {
                    let v = &nodes[p.0].value;
                    for c in 0..v.cols {
                        out.data[r * cols + offset + c] = v.get(r, c);
                    }
                    offset += v.cols;
                }
            }
            out
        };
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    fn unary(&self, a: TensorId, f: impl Fn(f64) -> f64, mk: impl Fn(TensorId) -> Op) -> TensorId {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            Array {
                rows: va.rows,
                cols: va.cols,
                data: va.data.iter().map(|&x| f(x)).collect(),
            }
        };
        self.push(value, mk(a))
    }

    pub fn relu(&self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&self, a: TensorId) -> TensorId {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn exp(&self, a: TensorId) -> TensorId {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn log(&self, a: TensorId) -> TensorId {
        self.unary(a, f64::ln, Op::Log)
    }

    /// Numerically stable log(1 + e^x).
    pub fn softplus(&self, a: TensorId) -> TensorId {
        self.unary(a, softplus, Op::Softplus)
    }

    pub fn sum(&self, a: TensorId) -> TensorId {
        let value = {
            let nodes = self.nodes.borrow();
            Array::scalar(nodes[a.0].value.data.iter().sum())
        };
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&self, a: TensorId) -> TensorId {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            Array::scalar(va.data.iter().sum::<f64>() / va.len() as f64)
        };
        self.push(value, Op::Mean(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self, a: TensorId) -> TensorId {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            let mut out = va.clone();
            for r in 0..va.rows {
                let row = &mut out.data[r * va.cols..(r + 1) * va.cols];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    denom += *v;
                }
                for v in row.iter_mut() {
                    *v /= denom;
                }
            }
            out
        };
        self.push(value, Op::SoftmaxRows(a))
    }

    /// log sum exp over a single row vector, yielding a scalar.
    pub fn logsumexp_row(&self, a: TensorId) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.rows != 1 {
                return Err(dim_err("logsumexp_row", format!("{:?}", va.shape())));
            }
            let max = va.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = va.data.iter().map(|&v| (v - max).exp()).sum();
            Array::scalar(max + s.ln())
        };
        Ok(self.push(value, Op::LogSumExpRow(a)))
    }

    /// Sum of elementwise products of two same-shape tensors; a scalar.
    pub fn dot(&self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if !va.same_shape(vb) {
                return Err(dim_err(
                    "dot",
                    format!("{:?} vs {:?}", va.shape(), vb.shape()),
                ));
            }
            Array::scalar(va.data.iter().zip(&vb.data).map(|(x, y)| x * y).sum())
        };
        Ok(self.push(value, Op::Dot(a, b)))
    }

    /// Select row `r` of a matrix as a 1 x cols tensor (embedding lookup).
    pub fn row_select(&self, a: TensorId, r: usize) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if r >= va.rows {
                return Err(Error::Lookup(format!(
                    "row {r} out of range for {:?}",
                    va.shape()
                )));
            }
            Array::row(va.data[r * va.cols..(r + 1) * va.cols].to_vec())
        };
        Ok(self.push(value, Op::RowSelect(a, r)))
    }

    /// Select a contiguous block of rows [start, start+len).
    pub fn row_slice(&self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if start + len > va.rows {
                return Err(Error::Lookup(format!(
                    "rows {start}..{} out of range for {:?}",
                    start + len,
                    va.shape()
                )));
            }
            Array {
                rows: len,
                cols: va.cols,
                data: va.data[start * va.cols..(start + len) * va.cols].to_vec(),
            }
        };
        Ok(self.push(value, Op::RowSlice(a, start, len)))
    }

    /// Select column `c` of a row vector as a scalar.
    pub fn col_select(&self, a: TensorId, c: usize) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.rows != 1 || c >= va.cols {
                return Err(Error::Lookup(format!(
                    "column {c} out of range for {:?}",
                    va.shape()
                )));
            }
            Array::scalar(va.get(0, c))
        };
        Ok(self.push(value, Op::ColSelect(a, c)))
    }

    /// Multiply a tensor by a 1 x 1 scalar tensor.
    pub fn mul_scalar(&self, a: TensorId, s: TensorId) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vs) = (&nodes[a.0].value, &nodes[s.0].value);
            if !vs.is_scalar() {
                return Err(dim_err("mul_scalar", format!("scale is {:?}", vs.shape())));
            }
            let c = vs.as_scalar();
            Array {
                rows: va.rows,
                cols: va.cols,
                data: va.data.iter().map(|&x| x * c).collect(),
            }
        };
        Ok(self.push(value, Op::MulScalar(a, s)))
    }

    /// Elementwise multiply by a constant mask (dropout with a supplied mask).
    pub fn mask_mul(&self, a: TensorId, mask: &Array) -> Result<TensorId> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if !va.same_shape(mask) {
                return Err(dim_err(
                    "mask_mul",
                    format!("{:?} vs {:?}", va.shape(), mask.shape()),
                ));
            }
            Array {
                rows: va.rows,
                cols: va.cols,
                data: va.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect(),
            }
        };
        Ok(self.push(value, Op::MaskMul(a, mask.clone())))
    }

    /// Sum a slice of same-shape tensors (folded adds).
    pub fn sum_all(&self, parts: &[TensorId]) -> Result<TensorId> {
        let mut it = parts.iter();
        let first = *it
            .next()
            .ok_or_else(|| Error::Contract("sum_all of zero tensors".into()))?;
        let mut acc = first;
        for &p in it {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; nodes not
    /// reached keep `None` (read as zero).
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Array::scalar(1.0));
        let accum = |grads: &mut Vec<Option<Array>>, id: TensorId, g: Array| match &mut grads
            [id.0]
        {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        for i in (0..nodes.len()).rev() {
            let g = match grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    let neg = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().map(|&x| -x).collect(),
                    };
                    accum(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect(),
                    };
                    let gb = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect(),
                    };
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    accum(&mut grads, *a, g.matmul_t(vb));
                    accum(&mut grads, *b, va.t_matmul(&g));
                }
                Op::Scale(a, c) => {
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().map(|&x| x * c).collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::AddConst(a) => accum(&mut grads, *a, g),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let v = &nodes[p.0].value;
                        let mut gp = Array::zeros(v.rows, v.cols);
                        for r in 0..v.rows {
                            for c in 0..v.cols {
                                gp.set(r, c, g.get(r, offset + c));
                            }
                        }
                        offset += v.cols;
                        accum(&mut grads, *p, gp);
                    }
                }
                Op::Relu(a) => {
                    let va = &nodes[a.0].value;
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&va.data)
                            .map(|(&gx, &x)| if x > 0.0 { gx } else { 0.0 })
                            .collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let vy = &nodes[i].value;
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&vy.data)
                            .map(|(&gx, &y)| gx * y * (1.0 - y))
                            .collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let vy = &nodes[i].value;
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&vy.data).map(|(&gx, &y)| gx * y).collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let va = &nodes[a.0].value;
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&va.data).map(|(&gx, &x)| gx / x).collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let va = &nodes[a.0].value;
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&va.data)
                            .map(|(&gx, &x)| gx * sigmoid(x))
                            .collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let va = &nodes[a.0].value;
                    let ga = Array {
                        rows: va.rows,
                        cols: va.cols,
                        data: vec![g.as_scalar(); va.len()],
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let va = &nodes[a.0].value;
                    let ga = Array {
                        rows: va.rows,
                        cols: va.cols,
                        data: vec![g.as_scalar() / va.len() as f64; va.len()],
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let vy = &nodes[i].value;
                    let mut ga = Array::zeros(vy.rows, vy.cols);
                    for r in 0..vy.rows {
                        let mut dot = 0.0;
                        for c in 0..vy.cols {
                            dot += g.get(r, c) * vy.get(r, c);
                        }
                        for c in 0..vy.cols {
                            ga.set(r, c, vy.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::LogSumExpRow(a) => {
                    let va = &nodes[a.0].value;
                    let lse = nodes[i].value.as_scalar();
                    let gs = g.as_scalar();
                    let ga = Array {
                        rows: va.rows,
                        cols: va.cols,
                        data: va.data.iter().map(|&x| gs * (x - lse).exp()).collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let gs = g.as_scalar();
                    let ga = Array {
                        rows: vb.rows,
                        cols: vb.cols,
                        data: vb.data.iter().map(|&x| gs * x).collect(),
                    };
                    let gb = Array {
                        rows: va.rows,
                        cols: va.cols,
                        data: va.data.iter().map(|&x| gs * x).collect(),
                    };
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::RowSelect(a, r) => {
                    let va = &nodes[a.0].value;
                    let mut ga = Array::zeros(va.rows, va.cols);
                    for c in 0..va.cols {
                        ga.set(*r, c, g.get(0, c));
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::RowSlice(a, start, len) => {
                    let va = &nodes[a.0].value;
                    let mut ga = Array::zeros(va.rows, va.cols);
                    for r in 0..*len {
                        for c in 0..va.cols {
                            ga.set(start + r, c, g.get(r, c));
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ColSelect(a, c) => {
                    let va = &nodes[a.0].value;
                    let mut ga = Array::zeros(va.rows, va.cols);
                    ga.set(0, *c, g.as_scalar());
                    accum(&mut grads, *a, ga);
                }
                Op::MulScalar(a, s) => {
                    let (va, vs) = (&nodes[a.0].value, &nodes[s.0].value);
                    let c = vs.as_scalar();
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().map(|&x| x * c).collect(),
                    };
                    let gs = Array::scalar(g.data.iter().zip(&va.data).map(|(x, y)| x * y).sum());
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *s, gs);
                }
                Op::MaskMul(a, mask) => {
                    let ga = Array {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect(),
                    };
                    accum(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, t: TensorId) -> Option<&Array> {
        self.grads[t.0].as_ref()
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

/// Named trainable arrays with a stable order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, array: Array, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.arrays.push(array);
        self.trainable.push(trainable);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.index.get(name).map(|&i| &self.arrays[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        let i = *self.index.get(name)?;
        Some(&mut self.arrays[i])
    }

    pub fn array(&self, idx: usize) -> &Array {
        &self.arrays[idx]
    }

    pub fn array_mut(&mut self, idx: usize) -> &mut Array {
        &mut self.arrays[idx]
    }

    pub fn is_trainable(&self, idx: usize) -> bool {
        self.trainable[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Put every parameter on a tape as a leaf, remembering the ids.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        BoundParams {
            ids: self.arrays.iter().map(|a| tape.leaf(a.clone())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(Array::all_finite)
    }
}

/// Tape ids for one binding of a `ParamStore`, index-aligned with it.
pub struct BoundParams {
    ids: Vec<TensorId>,
}

impl BoundParams {
    pub fn id(&self, idx: usize) -> TensorId {
        self.ids[idx]
    }

    /// Gradients per parameter name; unreached trainable parameters get zeros.
    pub fn grads_by_name(&self, store: &ParamStore, grads: &Gradients) -> BTreeMap<String, Array> {
        let mut out = BTreeMap::new();
        for (idx, name) in store.names().iter().enumerate() {
            if !store.is_trainable(idx) {
                continue;
            }
            let a = store.array(idx);
            let g = grads
                .get(self.ids[idx])
                .cloned()
                .unwrap_or_else(|| Array::zeros(a.rows, a.cols));
            out.insert(name.clone(), g);
        }
        out
    }

    /// Gradients as a dense per-parameter vector aligned with the store order.
    pub fn grads_by_index(&self, store: &ParamStore, grads: &Gradients) -> Vec<Array> {
        (0..store.len())
            .map(|idx| {
                let a = store.array(idx);
                grads
                    .get(self.ids[idx])
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(a.rows, a.cols))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    trainable: bool,
    array: Array,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    params: Vec<CheckpointParam>,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

impl ParamStore {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.arrays)
                .zip(&self.trainable)
                .map(|((name, array), &trainable)| CheckpointParam {
                    name: name.clone(),
                    trainable,
                    array: array.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("serialize checkpoint")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)
            .map_err(|e| Error::Compat(format!("bad checkpoint: {e}")))?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Compat(format!(
                "checkpoint format {} unsupported (expected {})",
                file.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let mut store = ParamStore::new();
        for p in file.params {
            store.add(&p.name, p.array, p.trainable)?;
        }
        Ok(store)
    }
}

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compare the analytic gradients returned by `f` against central finite
/// differences of its loss value, per trainable parameter.
pub fn gradient_check<F>(params: &ParamStore, f: &F, step: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (f64, BTreeMap<String, Array>),
{
    let (_, analytic) = f(params);
    let mut entries = Vec::new();
    for (idx, name) in params.names().iter().enumerate() {
        if !params.is_trainable(idx) {
            continue;
        }
        let a_grad = &analytic[name];
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for elem in 0..params.array(idx).len() {
            let mut plus = params.clone();
            plus.array_mut(idx).data[elem] += step;
            let mut minus = params.clone();
            minus.array_mut(idx).data[elem] -= step;
            let fd = (f(&plus).0 - f(&minus).0) / (2.0 * step);
            let a = a_grad.data[elem];
            max_rel = max_rel.max(rel_err(a, fd));
            max_abs = max_abs.max((a - fd).abs());
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    GradCheckReport { entries, tolerance }
}
