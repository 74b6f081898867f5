//! Reverse-mode differentiation on a single-threaded tape.
//!
//! A [`Tape`] records every operation applied to its variables; calling
//! [`Tape::backward`] on a scalar result fills gradient accumulators for all
//! tracked nodes. One tape is one computation graph and is confined to one
//! thread; distinct tapes on distinct threads are independent.
//!
//! Reductions inside each operation run in a fixed sequential order, so
//! results are bit-reproducible for identical inputs.

use crate::arch::Activation;
use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Log-floor added inside row cross-entropy so a vanishing predicted
/// probability cannot produce `ln(0)`.
pub const CROSS_ENTROPY_FLOOR: f64 = 1e-12;

/// Tolerance for the row-stochastic precondition of cross-entropy inputs.
const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Unary(Activation, Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    RowCrossEntropy {
        target: Var,
        pred: Var,
    },
    MeanAll(Var),
    SumAll(Var),
    SliceCols {
        src: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Computation graph with recorded forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF, used by the erf-based GELU.
fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Standard normal PDF.
fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    (-0.5 * x * x).exp() * INV_SQRT_2PI
}

pub(crate) fn activation_value(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Gelu => x * norm_cdf(x),
        Activation::Relu => x.max(0.0),
        Activation::Silu => x * sigmoid(x),
    }
}

pub(crate) fn activation_derivative(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Gelu => norm_cdf(x) + x * norm_pdf(x),
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a leaf tensor. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Insert an untracked constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let g = self.grad(v)?;
        Some(Tensor::new(self.value(v).shape().to_vec(), g.to_vec()).expect("grad shape"))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let shape = self.value(v).shape();
        match shape {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::DimensionMismatch {
                op,
                lhs: shape.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    // ---- forward operations -------------------------------------------------

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out).expect("matmul shape"),
            Op::MatMul(a, b),
            tracked,
        ))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op_name: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::DimensionMismatch {
                op: op_name,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Add(a, b), tracked))
    }

    /// Broadcast-add a length-`n` row vector to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).shape() != [n] {
            return Err(Error::DimensionMismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(row).shape().to_vec(),
            });
        }
        let r = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(
            Tensor::new(vec![m, n], data).unwrap(),
            Op::AddRow(a, row),
            tracked,
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Sub(a, b), tracked))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a);
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale(a, c), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::new(vec![n, m], data).unwrap(),
            Op::Transpose(a),
            tracked,
        ))
    }

    /// Elementwise activation; GELU is the exact erf form `x·Φ(x)`.
    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| activation_value(kind, v))
            .collect();
        let shape = self.value(x).shape().to_vec();
        let tracked = self.tracked(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Unary(kind, x), tracked)
    }

    pub fn sigmoid_op(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let tracked = self.tracked(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Sigmoid(x), tracked)
    }

    pub fn tanh_op(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let shape = self.value(x).shape().to_vec();
        let tracked = self.tracked(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Tanh(x), tracked)
    }

    /// Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        let src = self.value(x).data();
        if src.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric {
                op: "softmax_rows",
                msg: "NaN input".into(),
            });
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::new(vec![m, n], data).unwrap(),
            Op::SoftmaxRows(x),
            tracked,
        ))
    }

    /// Per-row layer normalization of `x[m×n]` with affine `gamma`, `beta` of
    /// shape `[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        for (v, name) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(v).shape() != [n] {
                return Err(Error::DimensionMismatch {
                    op: "layer_norm",
                    lhs: vec![m, n],
                    rhs: self.value(v).shape().to_vec(),
                });
            }
            let _ = name;
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut data = vec![0.0; m * n];
        let nf = n as f64;
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / nf;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            let inv_std = 1.0 / (var + eps).sqrt();
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(
            Tensor::new(vec![m, n], data).unwrap(),
            Op::LayerNorm { x, gamma, beta, eps },
            tracked,
        ))
    }

    /// Mean over all elements of squared differences; scalar output.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.binary_same_shape(pred, target, "mse")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let n = p.len() as f64;
        let mut acc = 0.0;
        for (a, b) in p.iter().zip(t) {
            let d = a - b;
            acc += d * d;
        }
        let tracked = self.tracked(pred) || self.tracked(target);
        Ok(self.push(
            Tensor::scalar(acc / n),
            Op::Mse { pred, target },
            tracked,
        ))
    }

    /// Mean over rows of `−Σ target·ln(pred + δ)` for row-stochastic inputs.
    pub fn row_cross_entropy(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.binary_same_shape(target, pred, "row_cross_entropy")?;
        let (m, n) = self.dims2(pred, "row_cross_entropy")?;
        for (v, name) in [(target, "target"), (pred, "pred")] {
            let data = self.value(v).data();
            for i in 0..m {
                let row = &data[i * n..(i + 1) * n];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| p < -1e-12) {
                    return Err(Error::Contract(format!(
                        "row_cross_entropy: {name} row {i} is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        let t = self.value(target).data();
        let p = self.value(pred).data();
        let mut acc = 0.0;
        for (tv, pv) in t.iter().zip(p) {
            acc -= tv * (pv + CROSS_ENTROPY_FLOOR).ln();
        }
        let tracked = self.tracked(target) || self.tracked(pred);
        Ok(self.push(
            Tensor::scalar(acc / m as f64),
            Op::RowCrossEntropy { target, pred },
            tracked,
        ))
    }

    /// Mean over all elements; scalar output.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(mean), Op::MeanAll(a), tracked)
    }

    /// Sum over all elements; scalar output.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), tracked)
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(src, "slice_cols")?;
        if start + len > n {
            return Err(Error::DimensionMismatch {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let s = self.value(src).data();
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&s[i * n + start..i * n + start + len]);
        }
        let tracked = self.tracked(src);
        Ok(self.push(
            Tensor::new(vec![m, len], data).unwrap(),
            Op::SliceCols { src, start, len },
            tracked,
        ))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat_cols: empty part list".into()));
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::DimensionMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total += pn;
        }
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for &p in parts {
            let (_, pn) = self.dims2(p, "concat_cols")?;
            let src = self.value(p).data();
            for i in 0..m {
                data[i * total + offset..i * total + offset + pn]
                    .copy_from_slice(&src[i * pn..(i + 1) * pn]);
            }
            offset += pn;
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::new(vec![m, total], data).unwrap(),
            Op::ConcatCols(parts.to_vec()),
            tracked,
        ))
    }

    /// Gather rows of `table[v×d]` by index; backward scatter-adds.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embed")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Input(format!(
                "embed: id {bad} out of range for table with {v} rows"
            )));
        }
        let src = self.value(table).data();
        let mut data = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            data[i * d..(i + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        let tracked = self.tracked(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data).unwrap(),
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            tracked,
        ))
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse pass from a scalar node. Fills gradients for every tracked
    /// node reachable from `target`.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(Error::DimensionMismatch {
                op: "backward",
                lhs: self.value(target).shape().to_vec(),
                rhs: vec![1],
            });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tracked {
                self.grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        if let Some(g) = self.grads[target.0].as_mut() {
            g[0] = 1.0;
        } else {
            // Untracked target: nothing depends on a tracked leaf.
            return Ok(());
        }

        for idx in (0..=target.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            let grad = match self.grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let n = self.nodes[b.0].value.cols();
                    if self.tracked(a) {
                        // da = g · bᵀ
                        let b_data = self.nodes[b.0].value.data();
                        let mut bt = vec![0.0; k * n];
                        for p in 0..k {
                            for j in 0..n {
                                bt[j * k + p] = b_data[p * n + j];
                            }
                        }
                        let mut da = vec![0.0; m * k];
                        matmul_into(&mut da, &grad, &bt, m, n, k);
                        accumulate(self.grads[a.0].as_mut().unwrap(), &da);
                    }
                    if self.tracked(b) {
                        // db = aᵀ · g
                        let a_data = self.nodes[a.0].value.data();
                        let mut at = vec![0.0; k * m];
                        for i in 0..m {
                            for p in 0..k {
                                at[p * m + i] = a_data[i * k + p];
                            }
                        }
                        let mut db = vec![0.0; k * n];
                        matmul_into(&mut db, &at, &grad, k, m, n);
                        accumulate(self.grads[b.0].as_mut().unwrap(), &db);
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(a) {
                        accumulate(self.grads[a.0].as_mut().unwrap(), &grad);
                    }
                    if self.tracked(b) {
                        accumulate(self.grads[b.0].as_mut().unwrap(), &grad);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.tracked(a) {
                        accumulate(self.grads[a.0].as_mut().unwrap(), &grad);
                    }
                    if self.tracked(row) {
                        let n = self.nodes[row.0].value.len();
                        let g = self.grads[row.0].as_mut().unwrap();
                        for (i, gv) in grad.iter().enumerate() {
                            g[i % n] += gv;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.tracked(a) {
                        accumulate(self.grads[a.0].as_mut().unwrap(), &grad);
                    }
                    if self.tracked(b) {
                        let g = self.grads[b.0].as_mut().unwrap();
                        for (gv, s) in g.iter_mut().zip(&grad) {
                            *gv -= s;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(a) {
                        let other = self.nodes[b.0].value.data().to_vec();
                        let g = self.grads[a.0].as_mut().unwrap();
                        for ((gv, s), o) in g.iter_mut().zip(&grad).zip(&other) {
                            *gv += s * o;
                        }
                    }
                    if self.tracked(b) {
                        let other = self.nodes[a.0].value.data().to_vec();
                        let g = self.grads[b.0].as_mut().unwrap();
                        for ((gv, s), o) in g.iter_mut().zip(&grad).zip(&other) {
                            *gv += s * o;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.tracked(a) {
                        let g = self.grads[a.0].as_mut().unwrap();
                        for (gv, s) in g.iter_mut().zip(&grad) {
                            *gv += s * c;
                        }
                    }
                }
                Op::Transpose(a) => {
                    if self.tracked(a) {
                        let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                        let g = self.grads[a.0].as_mut().unwrap();
                        for i in 0..m {
                            for j in 0..n {
                                g[i * n + j] += grad[j * m + i];
                            }
                        }
                    }
                }
                Op::Unary(kind, a) => {
                    if self.tracked(a) {
                        let input = self.nodes[a.0].value.data().to_vec();
                        let g = self.grads[a.0].as_mut().unwrap();
                        for ((gv, s), x) in g.iter_mut().zip(&grad).zip(&input) {
                            *gv += s * activation_derivative(kind, *x);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.tracked(a) {
                        let out = self.nodes[idx].value.data().to_vec();
                        let g = self.grads[a.0].as_mut().unwrap();
                        for ((gv, s), y) in g.iter_mut().zip(&grad).zip(&out) {
                            *gv += s * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.tracked(a) {
                        let out = self.nodes[idx].value.data().to_vec();
                        let g = self.grads[a.0].as_mut().unwrap();
                        for ((gv, s), y) in g.iter_mut().zip(&grad).zip(&out) {
                            *gv += s * (1.0 - y * y);
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.tracked(a) {
                        let out = self.nodes[idx].value.data().to_vec();
                        let (m, n) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                        let g = self.grads[a.0].as_mut().unwrap();
                        for i in 0..m {
                            let s = &out[i * n..(i + 1) * n];
                            let gr = &grad[i * n..(i + 1) * n];
                            let dot: f64 = s.iter().zip(gr).map(|(sv, gv)| sv * gv).sum();
                            for j in 0..n {
                                g[i * n + j] += s[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (m, n) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let src = self.nodes[x.0].value.data().to_vec();
                    let gam = self.nodes[gamma.0].value.data().to_vec();
                    let nf = n as f64;
                    let mut dx = vec![0.0; m * n];
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    for i in 0..m {
                        let row = &src[i * n..(i + 1) * n];
                        let gr = &grad[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / nf;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            gr.iter().zip(&gam).map(|(g, w)| g * w).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dgamma[j] += gr[j] * xhat[j];
                            dbeta[j] += gr[j];
                            dx[i * n + j] += inv_std / nf
                                * (nf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    if self.tracked(x) {
                        accumulate(self.grads[x.0].as_mut().unwrap(), &dx);
                    }
                    if self.tracked(gamma) {
                        accumulate(self.grads[gamma.0].as_mut().unwrap(), &dgamma);
                    }
                    if self.tracked(beta) {
                        accumulate(self.grads[beta.0].as_mut().unwrap(), &dbeta);
                    }
                }
                Op::Mse { pred, target } => {
                    let p = self.nodes[pred.0].value.data().to_vec();
                    let t = self.nodes[target.0].value.data().to_vec();
                    let scale = grad[0] * 2.0 / p.len() as f64;
                    if self.tracked(pred) {
                        let g = self.grads[pred.0].as_mut().unwrap();
                        for (i, gv) in g.iter_mut().enumerate() {
                            *gv += scale * (p[i] - t[i]);
                        }
                    }
                    if self.tracked(target) {
                        let g = self.grads[target.0].as_mut().unwrap();
                        for (i, gv) in g.iter_mut().enumerate() {
                            *gv -= scale * (p[i] - t[i]);
                        }
                    }
                }
                Op::RowCrossEntropy { target, pred } => {
                    let p = self.nodes[pred.0].value.data().to_vec();
                    let t = self.nodes[target.0].value.data().to_vec();
                    let m = self.nodes[pred.0].value.rows() as f64;
                    let scale = grad[0] / m;
                    if self.tracked(pred) {
                        let g = self.grads[pred.0].as_mut().unwrap();
                        for (i, gv) in g.iter_mut().enumerate() {
                            *gv -= scale * t[i] / (p[i] + CROSS_ENTROPY_FLOOR);
                        }
                    }
                    if self.tracked(target) {
                        let g = self.grads[target.0].as_mut().unwrap();
                        for (i, gv) in g.iter_mut().enumerate() {
                            *gv -= scale * (p[i] + CROSS_ENTROPY_FLOOR).ln();
                        }
                    }
                }
                Op::MeanAll(a) => {
                    if self.tracked(a) {
                        let n = self.nodes[a.0].value.len() as f64;
                        let s = grad[0] / n;
                        let g = self.grads[a.0].as_mut().unwrap();
                        for gv in g.iter_mut() {
                            *gv += s;
                        }
                    }
                }
                Op::SumAll(a) => {
                    if self.tracked(a) {
                        let s = grad[0];
                        let g = self.grads[a.0].as_mut().unwrap();
                        for gv in g.iter_mut() {
                            *gv += s;
                        }
                    }
                }
                Op::SliceCols { src, start, len } => {
                    if self.tracked(src) {
                        let n = self.nodes[src.0].value.cols();
                        let m = self.nodes[src.0].value.rows();
                        let g = self.grads[src.0].as_mut().unwrap();
                        for i in 0..m {
                            for j in 0..len {
                                g[i * n + start + j] += grad[i * len + j];
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = self.nodes[idx].value.cols();
                    let m = self.nodes[idx].value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let pn = self.nodes[p.0].value.cols();
                        if self.tracked(p) {
                            let g = self.grads[p.0].as_mut().unwrap();
                            for i in 0..m {
                                for j in 0..pn {
                                    g[i * pn + j] += grad[i * total + offset + j];
                                }
                            }
                        }
                        offset += pn;
                    }
                }
                Op::Embed { table, ids } => {
                    if self.tracked(table) {
                        let d = self.nodes[table.0].value.cols();
                        let g = self.grads[table.0].as_mut().unwrap();
                        for (i, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                g[id * d + j] += grad[i * d + j];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
