//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape. Because
//! nodes are only ever appended, creation order is a topological order, and
//! [`Graph::backward`] walks it once from the loss down to index zero.

use std::collections::BTreeMap;

use crate::error::{invalid, mismatch, NumericsError, Result};
use crate::gemm::gemm;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    RmsNormRows { x: Var, inv_rms: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    GatherRows { x: Var, index: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    L1(Var, Var),
    ReplaceRows { x: Var, fill: Var, keep: Vec<bool> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward evaluation.
///
/// A graph is confined to a single thread while it is built and
/// differentiated; independent graphs may be used concurrently.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient table for every trainable parameter in `bound`.
    pub fn collect(&self, bound: &Bound) -> BTreeMap<String, Tensor> {
        bound
            .trainable()
            .filter_map(|(name, v)| self.get(v).map(|g| (name.to_string(), g.clone())))
            .collect()
    }
}

/// Parameters of a [`ParamStore`] placed on a graph as leaves.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, (Var, bool)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .map(|&(v, _)| v)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars
            .iter()
            .filter(|(_, (_, t))| *t)
            .map(|(n, (v, _))| (n.as_str(), *v))
    }
}

fn add_into(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(delta.data())
            .for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Places every parameter of `store` on the graph. Names listed in
    /// `frozen` become constants and receive no gradient.
    pub fn bind(&mut self, store: &ParamStore, frozen: &[&str]) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in store.iter() {
            let trainable = !frozen.contains(&name);
            let v = self.leaf(t.clone(), trainable);
            vars.insert(name.to_string(), (v, trainable));
        }
        Bound { vars }
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            other => Err(invalid(op, format!("expected a matrix, got shape {other:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(mismatch("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&self, op: &'static str, a: Var, r: Var) -> Result<(usize, usize)> {
        let (m, n) = self.matrix_dims(op, a)?;
        if self.value(r).len() != n {
            return Err(mismatch(op, self.shape(a), self.shape(r)));
        }
        Ok((m, n))
    }

    /// Adds the length-`n` vector `r` to every row of the `m×n` matrix `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast("add_row", a, r)?;
        let rv = self.value(r).data();
        let mut out = self.value(a).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += rv[i % n];
        }
        let rg = self.any_grad(&[a, r]);
        Ok(self.push(out, Op::AddRow(a, r), rg))
    }

    /// Multiplies every row of `a` elementwise by the vector `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast("mul_row", a, r)?;
        let rv = self.value(r).data();
        let mut out = self.value(a).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= rv[i % n];
        }
        let rg = self.any_grad(&[a, r]);
        Ok(self.push(out, Op::MulRow(a, r), rg))
    }

    /// Scales row `i` of `a` by `c[i]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("mul_col", a)?;
        if self.value(c).len() != m {
            return Err(mismatch("mul_col", self.shape(a), self.shape(c)));
        }
        let cv = self.value(c).data();
        let mut out = self.value(a).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= cv[i / n];
        }
        let rg = self.any_grad(&[a, c]);
        Ok(self.push(out, Op::MulCol(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Scale(a, s), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::AddScalar(a), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, op, rg))
    }

    /// `x · sigmoid(x)`
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Row-wise softmax of a matrix (or of a vector, treated as one row).
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if n == 0 {
            return Err(invalid("softmax_rows", "zero-width rows"));
        }
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let n = self.value(a).cols();
        let mut out = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(out.len() / n.max(1));
        for row in out.data_mut().chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::LayerNormRows { x: a, inv_std }, rg))
    }

    /// Per-row `x / sqrt(mean(x²) + eps)` without a learned gain.
    pub fn rms_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let n = self.value(a).cols();
        let mut out = self.value(a).clone();
        let mut inv_rms = Vec::with_capacity(out.len() / n.max(1));
        for row in out.data_mut().chunks_mut(n) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let ir = 1.0 / (ms + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= ir);
            inv_rms.push(ir);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::RmsNormRows { x: a, inv_rms }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(a)
            .reshape(shape)
            .map_err(|_| mismatch("reshape", self.shape(a), shape))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Output row `i` is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, _) = self.matrix_dims("gather_rows", a)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(invalid("gather_rows", format!("row {bad} out of range for {m} rows")));
        }
        let out = self.value(a).gather_rows(index);
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            out,
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| invalid("concat_rows", "no inputs"))?;
        let (_, n) = self.matrix_dims("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_rows", p)?;
            if c != n {
                return Err(mismatch("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_rows", a)?;
        if start + len > m {
            return Err(invalid("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows { x: a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| invalid("concat_cols", "no inputs"))?;
        let (m, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_cols", a)?;
        if start + len > n {
            return Err(invalid("slice_cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols { x: a, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(invalid("mean", "empty tensor"));
        }
        let s = self.value(a).mean();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Column sums of a matrix, as a length-`n` vector.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims("sum_rows", a)?;
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::vector(out), Op::SumRows(a), rg))
    }

    /// Mean absolute difference between two same-shaped tensors.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1", a, b)?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(invalid("l1", "empty tensors"));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n as f64), Op::L1(a, b), rg))
    }

    /// Row `i` of the output is row `i` of `x` where `keep[i]`, else the
    /// vector `fill`. Kept rows are copied bit-for-bit.
    pub fn replace_rows(&mut self, x: Var, fill: Var, keep: &[bool]) -> Result<Var> {
        let (m, n) = self.matrix_dims("replace_rows", x)?;
        if keep.len() != m {
            return Err(mismatch("replace_rows", self.shape(x), &[keep.len()]));
        }
        if self.value(fill).len() != n {
            return Err(mismatch("replace_rows", self.shape(x), self.shape(fill)));
        }
        let mut out = self.value(x).clone();
        let fv = self.value(fill).data().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(i).copy_from_slice(&fv);
            }
        }
        let rg = self.any_grad(&[x, fill]);
        Ok(self.push(
            out,
            Op::ReplaceRows {
                x,
                fill,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from the scalar `loss`.
    ///
    /// Every leaf that requires a gradient ends up with one, zero-filled when
    /// it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn send(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if self.wants(v) {
            add_into(&mut grads[v.0], delta);
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matmul lhs");
                let n = self.value(*b).cols();
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut da, false);
                    self.send(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut db, false);
                    self.send(grads, *b, Tensor::matrix(k, n, db).expect("shape"));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matmul_nt lhs");
                let n = self.value(*b).rows();
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), false, &mut da, false);
                    self.send(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, g.data(), true, self.value(*a).data(), false, &mut db, false);
                    self.send(grads, *b, Tensor::matrix(n, k, db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.send(grads, *a, g.zip_map(self.value(*b), |x, y| x * y).expect("shape"));
                }
                if self.wants(*b) {
                    self.send(grads, *b, g.zip_map(self.value(*a), |x, y| x * y).expect("shape"));
                }
            }
            Op::AddRow(a, r) => {
                self.send(grads, *a, g.clone());
                if self.wants(*r) {
                    let rt = self.value(*r);
                    let n = rt.len();
                    let mut dr = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        dr.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.send(grads, *r, Tensor::new(rt.shape().to_vec(), dr).expect("shape"));
                }
            }
            Op::MulRow(a, r) => {
                let rt = self.value(*r);
                let n = rt.len();
                if self.wants(*a) {
                    let mut da = g.clone();
                    for (i, v) in da.data_mut().iter_mut().enumerate() {
                        *v *= rt.data()[i % n];
                    }
                    self.send(grads, *a, da);
                }
                if self.wants(*r) {
                    let mut dr = vec![0.0; n];
                    for (i, (gv, av)) in g.data().iter().zip(self.value(*a).data()).enumerate() {
                        dr[i % n] += gv * av;
                    }
                    self.send(grads, *r, Tensor::new(rt.shape().to_vec(), dr).expect("shape"));
                }
            }
            Op::MulCol(a, c) => {
                let ct = self.value(*c);
                let n = g.cols();
                if self.wants(*a) {
                    let mut da = g.clone();
                    for (i, v) in da.data_mut().iter_mut().enumerate() {
                        *v *= ct.data()[i / n];
                    }
                    self.send(grads, *a, da);
                }
                if self.wants(*c) {
                    let mut dc = vec![0.0; ct.len()];
                    for (i, (gv, av)) in g.data().iter().zip(self.value(*a).data()).enumerate() {
                        dc[i / n] += gv * av;
                    }
                    self.send(grads, *c, Tensor::new(ct.shape().to_vec(), dc).expect("shape"));
                }
            }
            Op::Scale(a, s) => self.send(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) => self.send(grads, *a, g.clone()),
            Op::Silu(a) => {
                let d = g
                    .zip_map(self.value(*a), |gv, x| {
                        let s = sigmoid(x);
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .expect("shape");
                self.send(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                self.send(grads, *a, g.zip_map(out, |gv, y| gv * y * (1.0 - y)).expect("shape"));
            }
            Op::Exp(a) => self.send(grads, *a, g.zip_map(out, |gv, y| gv * y).expect("shape")),
            Op::Log(a) => {
                self.send(grads, *a, g.zip_map(self.value(*a), |gv, x| gv / x).expect("shape"));
            }
            Op::Square(a) => {
                self.send(grads, *a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x).expect("shape"));
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(n).zip(out.data().chunks(n)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(gv, y)| gv * y).sum();
                    drow.iter_mut().zip(yrow).for_each(|(gv, y)| *gv = y * (*gv - dot));
                }
                self.send(grads, *a, d);
            }
            Op::LayerNormRows { x, inv_std } => {
                let n = out.cols();
                let mut d = g.clone();
                for ((drow, yrow), is) in d
                    .data_mut()
                    .chunks_mut(n)
                    .zip(out.data().chunks(n))
                    .zip(inv_std)
                {
                    let mg = drow.iter().sum::<f64>() / n as f64;
                    let mgy = drow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    drow.iter_mut()
                        .zip(yrow)
                        .for_each(|(gv, y)| *gv = is * (*gv - mg - y * mgy));
                }
                self.send(grads, *x, d);
            }
            Op::RmsNormRows { x, inv_rms } => {
                let n = out.cols();
                let mut d = g.clone();
                for ((drow, yrow), ir) in d
                    .data_mut()
                    .chunks_mut(n)
                    .zip(out.data().chunks(n))
                    .zip(inv_rms)
                {
                    let mgy = drow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    drow.iter_mut()
                        .zip(yrow)
                        .for_each(|(gv, y)| *gv = ir * (*gv - y * mgy));
                }
                self.send(grads, *x, d);
            }
            Op::Transpose(a) => self.send(grads, *a, g.transpose().expect("matrix")),
            Op::Reshape(a) => {
                self.send(grads, *a, g.reshape(self.value(*a).shape()).expect("numel"));
            }
            Op::GatherRows { x, index } => {
                if self.wants(*x) {
                    let mut d = Tensor::zeros(self.value(*x).shape());
                    for (i, &src) in index.iter().enumerate() {
                        d.row_mut(src)
                            .iter_mut()
                            .zip(g.row(i))
                            .for_each(|(a, b)| *a += b);
                    }
                    self.send(grads, *x, d);
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.wants(p) {
                        let data = g.data()[offset * n..(offset + r) * n].to_vec();
                        self.send(grads, p, Tensor::matrix(r, n, data).expect("shape"));
                    }
                    offset += r;
                }
            }
            Op::SliceRows { x, start } => {
                if self.wants(*x) {
                    let n = g.cols();
                    let mut d = Tensor::zeros(self.value(*x).shape());
                    d.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                    self.send(grads, *x, d);
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.wants(p) {
                        let mut data = Vec::with_capacity(m * c);
                        for i in 0..m {
                            data.extend_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        self.send(grads, p, Tensor::matrix(m, c, data).expect("shape"));
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let len = g.cols();
                    let mut d = Tensor::zeros(self.value(*x).shape());
                    for i in 0..g.rows() {
                        d.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                    }
                    self.send(grads, *x, d);
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.send(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let at = self.value(*a);
                let gv = g.data()[0] / at.len() as f64;
                self.send(grads, *a, Tensor::full(at.shape(), gv));
            }
            Op::SumRows(a) => {
                if self.wants(*a) {
                    let at = self.value(*a);
                    let n = at.cols();
                    let d = Tensor::from_fn(at.shape(), |i| g.data()[i % n]);
                    self.send(grads, *a, d);
                }
            }
            Op::L1(a, b) => {
                let at = self.value(*a);
                let scale = g.data()[0] / at.len() as f64;
                let sign = at
                    .zip_map(self.value(*b), |x, y| {
                        let d = x - y;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .expect("shape");
                if self.wants(*b) {
                    self.send(grads, *b, sign.map(|v| -v));
                }
                self.send(grads, *a, sign);
            }
            Op::ReplaceRows { x, fill, keep } => {
                if self.wants(*x) {
                    let mut d = g.clone();
                    for (i, &k) in keep.iter().enumerate() {
                        if !k {
                            d.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    self.send(grads, *x, d);
                }
                if self.wants(*fill) {
                    let ft = self.value(*fill);
                    let mut df = vec![0.0; ft.len()];
                    for (i, &k) in keep.iter().enumerate() {
                        if !k {
                            df.iter_mut().zip(g.row(i)).for_each(|(a, b)| *a += b);
                        }
                    }
                    self.send(grads, *fill, Tensor::new(ft.shape().to_vec(), df).expect("shape"));
                }
            }
        }
    }
}
