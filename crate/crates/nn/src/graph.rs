//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the inputs it was
//! computed from, so node order is a topological order. [`Graph::backward`]
//! sweeps the tape once in reverse.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `x (r x c)` times a column `s (r x 1)` broadcast along the row.
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Reshape(NodeId),
    PickCols(NodeId, Vec<usize>),
    Clamp(NodeId, f64, f64),
    Minimum(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumRows(NodeId),
    /// Per group `g`: `a_g (n x k)` times `b_g^T` where `b_g` is `m x k`.
    GroupMatMulBT { a: NodeId, b: NodeId, group: usize },
    /// Per group `g`: `a_g (n x m)` times `b_g (m x k)`; both have `n = m` rows per group.
    GroupMatMul { a: NodeId, b: NodeId, group: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, NodeId)>,
    grads: Vec<Option<Tensor>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn ew(d: &mut [f64], g: &[f64], f: impl Fn(usize) -> f64) {
    for (k, v) in d.iter_mut().enumerate() {
        *v += g[k] * f(k);
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// A constant input whose gradient is tracked, for checking derivatives
    /// with respect to inputs.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, true)
    }

    /// Binds a parameter; repeated binds of the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return node;
        }
        let node = self.push(store.value(id).clone(), Op::Param, true);
        self.param_nodes.push((id, node));
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(NnError::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            0.0,
            out.data_mut(),
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x c` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(NnError::shape("add_bias", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        let c = tx.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % c];
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn mul_col(&mut self, x: NodeId, col: NodeId) -> Result<NodeId, NnError> {
        let (tx, ts) = (self.value(x), self.value(col));
        if ts.cols() != 1 || ts.rows() != tx.rows() {
            return Err(NnError::shape("mul_col", tx.shape(), ts.shape()));
        }
        let c = tx.cols();
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= ts.data()[i / c];
        }
        let rg = self.rg(&[x, col]);
        Ok(self.push(out, Op::MulCol(x, col), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::ln);
        let rg = self.rg(&[x]);
        self.push(out, Op::Log(x), rg)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v * v);
        let rg = self.rg(&[x]);
        self.push(out, Op::Square(x), rg)
    }

    /// Row-wise normalization followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId, NnError> {
        let tx = self.value(x);
        let c = tx.cols();
        for p in [gamma, beta] {
            let tp = self.value(p);
            if tp.shape() != (1, c) {
                return Err(NnError::shape("layer_norm", tx.shape(), tp.shape()));
            }
        }
        let mut xhat = tx.clone();
        let mut rstd = Vec::with_capacity(tx.rows());
        for row in xhat.data_mut().chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * g[i % c] + b[i % c];
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let c = out.cols();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let c = out.cols();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmaxRows(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(NnError::shape("concat_cols", self.value(parts[0]).shape(), self.value(p).shape()));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(NnError::shape("concat_rows", self.value(parts[0]).shape(), self.value(p).shape()));
            }
        }
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let tx = self.value(x);
        if start + len > tx.cols() {
            return Err(NnError::shape("slice_cols", tx.shape(), (tx.rows(), start + len)));
        }
        let mut data = Vec::with_capacity(tx.rows() * len);
        for r in 0..tx.rows() {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let out = Tensor::new(tx.rows(), len, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let tx = self.value(x);
        if start + len > tx.rows() {
            return Err(NnError::shape("slice_rows", tx.shape(), (start + len, tx.cols())));
        }
        let out = tx.slice_rows(start, len);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId, NnError> {
        let tx = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.rows()) {
            return Err(NnError::shape("gather_rows", tx.shape(), (bad + 1, tx.cols())));
        }
        let mut data = Vec::with_capacity(index.len() * tx.cols());
        for &i in index {
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::new(index.len(), tx.cols(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GatherRows(x, index.to_vec()), rg))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId, NnError> {
        let tx = self.value(x);
        if tx.len() != rows * cols {
            return Err(NnError::shape("reshape", tx.shape(), (rows, cols)));
        }
        let out = Tensor::new(rows, cols, tx.data().to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Column `index[r]` of every row `r`, as an `r x 1` column.
    pub fn pick_cols(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId, NnError> {
        let tx = self.value(x);
        if index.len() != tx.rows() {
            return Err(NnError::shape("pick_cols", tx.shape(), (index.len(), 1)));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.cols()) {
            return Err(NnError::shape("pick_cols", tx.shape(), (tx.rows(), bad + 1)));
        }
        let data = index.iter().enumerate().map(|(r, &c)| tx.get(r, c)).collect();
        let out = Tensor::new(index.len(), 1, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::PickCols(x, index.to_vec()), rg))
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[x]);
        self.push(out, Op::Clamp(x, lo, hi), rg)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        same_shape("minimum", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| if x <= y { x } else { y });
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Minimum(a, b), rg))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        same_shape("maximum", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| if x >= y { x } else { y });
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Maximum(a, b), rg))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Sum over the columns of each row, as an `r x 1` column.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::new(t.rows(), 1, data).expect("column");
        let rg = self.rg(&[x]);
        self.push(out, Op::SumRows(x), rg)
    }

    /// For consecutive groups of `group` rows, `a_g * b_g^T`.
    pub fn group_matmul_bt(&mut self, a: NodeId, b: NodeId, group: usize) -> Result<NodeId, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if group == 0 || ta.rows() != tb.rows() || ta.cols() != tb.cols() || ta.rows() % group != 0 {
            return Err(NnError::shape("group_matmul_bt", ta.shape(), tb.shape()));
        }
        let (rows, k) = ta.shape();
        let mut out = Tensor::zeros(rows, group);
        let (ad, bd) = (ta.data(), tb.data());
        let od = out.data_mut();
        for g in 0..rows / group {
            for i in 0..group {
                let ar = &ad[(g * group + i) * k..(g * group + i + 1) * k];
                for j in 0..group {
                    let br = &bd[(g * group + j) * k..(g * group + j + 1) * k];
                    od[(g * group + i) * group + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::GroupMatMulBT { a, b, group }, rg))
    }

    /// For consecutive groups of `group` rows, `a_g * b_g` where `a` has
    /// `group` columns.
    pub fn group_matmul(&mut self, a: NodeId, b: NodeId, group: usize) -> Result<NodeId, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if group == 0 || ta.cols() != group || ta.rows() != tb.rows() || ta.rows() % group != 0 {
            return Err(NnError::shape("group_matmul", ta.shape(), tb.shape()));
        }
        let (rows, k) = (tb.rows(), tb.cols());
        let mut out = Tensor::zeros(rows, k);
        let (ad, bd) = (ta.data(), tb.data());
        let od = out.data_mut();
        for g in 0..rows / group {
            for i in 0..group {
                let orow = &mut od[(g * group + i) * k..(g * group + i + 1) * k];
                for j in 0..group {
                    let w = ad[(g * group + i) * group + j];
                    let brow = &bd[(g * group + j) * k..(g * group + j + 1) * k];
                    for (o, v) in orow.iter_mut().zip(brow) {
                        *o += w * v;
                    }
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::GroupMatMul { a, b, group }, rg))
    }

    /// Reverse sweep from a scalar output with seed gradient 1.
    pub fn backward(&mut self, output: NodeId) -> Result<(), NnError> {
        let shape = self.checked(output)?;
        if shape != (1, 1) {
            return Err(NnError::Usage(format!(
                "backward needs a scalar output or an explicit seed, got shape {shape:?}"
            )));
        }
        self.backward_with(output, Tensor::scalar(1.0))
    }

    fn checked(&self, output: NodeId) -> Result<(usize, usize), NnError> {
        if output.0 >= self.nodes.len() {
            return Err(NnError::Usage(
                "backward called on a node that was never recorded".to_string(),
            ));
        }
        Ok(self.shape(output))
    }

    /// Reverse sweep seeded with `seed`, which must match the output shape.
    pub fn backward_with(&mut self, output: NodeId, seed: Tensor) -> Result<(), NnError> {
        let shape = self.checked(output)?;
        if seed.shape() != shape {
            return Err(NnError::shape("backward seed", shape, seed.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward output with respect to `id`, if any reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds the gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.param_nodes {
            if let Some(g) = self.grad(node) {
                for (acc, v) in store.grad_mut(pid).data_mut().iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = &node.value;
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let slot = &mut grads[id.0];
            if slot.is_none() {
                let (r, c) = self.shape(id);
                *slot = Some(Tensor::zeros(r, c));
            }
            f(slot.as_mut().expect("just filled").data_mut());
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    acc(*a, &|d| {
                        gemm(m, n, k, g.data(), (n as isize, 1), tb.data(), (1, n as isize), 1.0, d)
                    });
                }
                if needs(*b) {
                    acc(*b, &|d| {
                        gemm(k, m, n, ta.data(), (1, k as isize), g.data(), (n as isize, 1), 1.0, d)
                    });
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, &|d| ew(d, g.data(), |_| 1.0));
                let c = val.cols();
                acc(*b, &|d| {
                    for (k, v) in g.data().iter().enumerate() {
                        d[k % c] += v;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|d| ew(d, g.data(), |_| 1.0));
                acc(*b, &|d| ew(d, g.data(), |_| 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &|d| ew(d, g.data(), |_| 1.0));
                acc(*b, &|d| ew(d, g.data(), |_| -1.0));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|d| ew(d, g.data(), |k| tb[k]));
                acc(*b, &|d| ew(d, g.data(), |k| ta[k]));
            }
            Op::MulCol(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let c = tx.cols();
                acc(*x, &|d| ew(d, g.data(), |k| ts.data()[k / c]));
                acc(*s, &|d| {
                    for (k, v) in g.data().iter().enumerate() {
                        d[k / c] += v * tx.data()[k];
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &|d| ew(d, g.data(), |_| *f)),
            Op::AddScalar(x) => acc(*x, &|d| ew(d, g.data(), |_| 1.0)),
            Op::Tanh(x) => acc(*x, &|d| ew(d, g.data(), |k| 1.0 - val.data()[k] * val.data()[k])),
            Op::Sigmoid(x) => acc(*x, &|d| ew(d, g.data(), |k| val.data()[k] * (1.0 - val.data()[k]))),
            Op::Exp(x) => acc(*x, &|d| ew(d, g.data(), |k| val.data()[k])),
            Op::Log(x) => {
                let tx = self.value(*x).data();
                acc(*x, &|d| ew(d, g.data(), |k| 1.0 / tx[k]))
            }
            Op::Square(x) => {
                let tx = self.value(*x).data();
                acc(*x, &|d| ew(d, g.data(), |k| 2.0 * tx[k]))
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = val.cols();
                let gam = self.value(*gamma).data();
                acc(*x, &|d| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let xh = &xhat.data()[r * c..(r + 1) * c];
                        let mut mean_dy = 0.0;
                        let mut mean_dy_xh = 0.0;
                        for j in 0..c {
                            let dy = gr[j] * gam[j];
                            mean_dy += dy;
                            mean_dy_xh += dy * xh[j];
                        }
                        mean_dy /= c as f64;
                        mean_dy_xh /= c as f64;
                        for j in 0..c {
                            let dy = gr[j] * gam[j];
                            d[r * c + j] += rs * (dy - mean_dy - xh[j] * mean_dy_xh);
                        }
                    }
                });
                acc(*gamma, &|d| {
                    for (k, v) in g.data().iter().enumerate() {
                        d[k % c] += v * xhat.data()[k];
                    }
                });
                acc(*beta, &|d| {
                    for (k, v) in g.data().iter().enumerate() {
                        d[k % c] += v;
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let c = val.cols();
                acc(*x, &|d| {
                    for r in 0..val.rows() {
                        let y = val.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[r * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let c = val.cols();
                acc(*x, &|d| {
                    for r in 0..val.rows() {
                        let y = val.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[r * c + j] += gr[j] - y[j].exp() * total;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let c = val.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    acc(p, &|d| {
                        for r in 0..val.rows() {
                            let src = &g.data()[r * c + offset..r * c + offset + pc];
                            for (o, v) in d[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &|d| {
                        for (o, v) in d.iter_mut().zip(&g.data()[offset..offset + n]) {
                            *o += v;
                        }
                    });
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let xc = self.value(*x).cols();
                let c = val.cols();
                acc(*x, &|d| {
                    for r in 0..val.rows() {
                        for j in 0..c {
                            d[r * xc + start + j] += g.data()[r * c + j];
                        }
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let offset = start * val.cols();
                acc(*x, &|d| {
                    for (o, v) in d[offset..offset + g.len()].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                });
            }
            Op::GatherRows(x, index) => {
                let c = val.cols();
                acc(*x, &|d| {
                    for (r, &src) in index.iter().enumerate() {
                        for j in 0..c {
                            d[src * c + j] += g.data()[r * c + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &|d| ew(d, g.data(), |_| 1.0)),
            Op::PickCols(x, index) => {
                let xc = self.value(*x).cols();
                acc(*x, &|d| {
                    for (r, &c) in index.iter().enumerate() {
                        d[r * xc + c] += g.data()[r];
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let tx = self.value(*x).data();
                acc(*x, &|d| ew(d, g.data(), |k| if tx[k] > *lo && tx[k] < *hi { 1.0 } else { 0.0 }));
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|d| ew(d, g.data(), |k| if ta[k] <= tb[k] { 1.0 } else { 0.0 }));
                acc(*b, &|d| ew(d, g.data(), |k| if ta[k] <= tb[k] { 0.0 } else { 1.0 }));
            }
            Op::Maximum(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|d| ew(d, g.data(), |k| if ta[k] >= tb[k] { 1.0 } else { 0.0 }));
                acc(*b, &|d| ew(d, g.data(), |k| if ta[k] >= tb[k] { 0.0 } else { 1.0 }));
            }
            Op::SumAll(x) => {
                let s = g.item();
                acc(*x, &|d| d.iter_mut().for_each(|v| *v += s));
            }
            Op::MeanAll(x) => {
                let s = g.item() / self.value(*x).len() as f64;
                acc(*x, &|d| d.iter_mut().for_each(|v| *v += s));
            }
            Op::SumRows(x) => {
                let c = self.value(*x).cols();
                acc(*x, &|d| {
                    for (k, v) in d.iter_mut().enumerate() {
                        *v += g.data()[k / c];
                    }
                });
            }
            Op::GroupMatMulBT { a, b, group } => {
                let group = *group;
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = ta.cols();
                let groups = ta.rows() / group;
                // d a_i += sum_j g_ij b_j ; d b_j += sum_i g_ij a_i
                acc(*a, &|d| {
                    for gi in 0..groups {
                        for i in 0..group {
                            let row = gi * group + i;
                            for j in 0..group {
                                let w = g.data()[row * group + j];
                                let br = tb.row(gi * group + j);
                                for (o, v) in d[row * k..(row + 1) * k].iter_mut().zip(br) {
                                    *o += w * v;
                                }
                            }
                        }
                    }
                });
                acc(*b, &|d| {
                    for gi in 0..groups {
                        for i in 0..group {
                            let row = gi * group + i;
                            let ar = ta.row(row);
                            for j in 0..group {
                                let w = g.data()[row * group + j];
                                let target = gi * group + j;
                                for (o, v) in d[target * k..(target + 1) * k].iter_mut().zip(ar) {
                                    *o += w * v;
                                }
                            }
                        }
                    }
                });
            }
            Op::GroupMatMul { a, b, group } => {
                let group = *group;
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = tb.cols();
                let groups = tb.rows() / group;
                // out_i = sum_j a_ij b_j
                acc(*a, &|d| {
                    for gi in 0..groups {
                        for i in 0..group {
                            let row = gi * group + i;
                            let gr = &g.data()[row * k..(row + 1) * k];
                            for j in 0..group {
                                let br = tb.row(gi * group + j);
                                d[row * group + j] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                });
                acc(*b, &|d| {
                    for gi in 0..groups {
                        for i in 0..group {
                            let row = gi * group + i;
                            let gr = &g.data()[row * k..(row + 1) * k];
                            for j in 0..group {
                                let w = ta.data()[row * group + j];
                                let target = gi * group + j;
                                for (o, v) in d[target * k..(target + 1) * k].iter_mut().zip(gr) {
                                    *o += w * v;
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}
