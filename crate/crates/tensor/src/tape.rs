use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::{
    axis_extents, broadcast_map, gelu, gelu_grad, gemm, sigmoid, softmax_along, softplus,
};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{matrix_dims, Tensor};

/// Score written into hidden attention positions before softmax.
pub const MASK_FILL: f64 = -1e9;

/// Handle to a node on a [`Tape`].
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
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Option<Vec<usize>>),
    Mul(Var, Var, Option<Vec<usize>>),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    MaskedFill { x: Var, mask: Vec<bool> },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Sigmoid(Var),
    Gelu(Var),
    Log(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Pick { x: Var, coords: Vec<(usize, usize)> },
    ScatterCols { x: Var, cols: Vec<usize>, width: usize },
    StraightThrough { probs: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::MaskedFill { .. } => "masked_fill",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Sigmoid(_) => "sigmoid",
            Op::Gelu(_) => "gelu",
            Op::Log(_) => "log",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Pick { .. } => "pick",
            Op::ScatterCols { .. } => "scatter_cols",
            Op::StraightThrough { .. } => "straight_through",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Execution record for one forward pass.
///
/// Nodes are appended in execution order, which is also a topological order;
/// [`Tape::backward`] walks them once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite output from {} (shape {:?})",
            op.name(),
            value.shape()
        );
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf, differentiated when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the same
    /// node so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(mismatch("transpose", &[s]));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Option<Vec<usize>>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(None);
        }
        broadcast_map(sa, sb).map(Some).ok_or_else(|| mismatch(op, &[sa, sb]))
    }

    /// Elementwise `a + b`, with `b` broadcast onto the shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = self.broadcast("add", a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match &map {
            None => va.iter().zip(vb).map(|(x, y)| x + y).collect(),
            Some(m) => va.iter().zip(m).map(|(x, &j)| x + vb[j]).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b, map), rg))
    }

    /// Elementwise `a * b`, with `b` broadcast onto the shape of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = self.broadcast("mul", a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match &map {
            None => va.iter().zip(vb).map(|(x, y)| x * y).collect(),
            Some(m) => va.iter().zip(m).map(|(x, &j)| x * vb[j]).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b, map), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x * factor).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x + c).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| attr("concat", "needs at least one input"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(attr("concat", format!("axis {axis} out of range for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                let shapes: Vec<&[usize]> = inputs.iter().map(|&v| self.shape(v)).collect();
                return Err(mismatch("concat", &shapes));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(inputs.to_vec(), axis), rg))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(attr(
                "slice",
                format!("range {start}..{end} on axis {axis} invalid for shape {s:?}"),
            ));
        }
        let (outer, len, inner) = axis_extents(&s, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start }, rg))
    }

    /// Embedding lookup: rows `ids` of a `[V, D]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(mismatch("gather", &[s]));
        }
        let (rows, cols) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(attr("gather", "empty id list"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(attr("gather", format!("id {bad} out of range for {rows} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        let t = Tensor::from_parts(vec![ids.len(), cols], out);
        Ok(self.push(t, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    /// Replaces elements where `mask` is true with `value`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(attr(
                "masked_fill",
                format!("mask has {} entries for shape {:?}", mask.len(), v.shape()),
            ));
        }
        let out = v
            .data()
            .iter()
            .zip(mask)
            .map(|(&a, &m)| if m { value } else { a })
            .collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaskedFill { x, mask: mask.to_vec() }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        check_axis("softmax", &s, axis)?;
        let out = softmax_along(self.value(x).data(), &s, axis, false);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(s, out), Op::Softmax { x, axis }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        check_axis("log_softmax", &s, axis)?;
        let out = softmax_along(self.value(x).data(), &s, axis, true);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(s, out), Op::LogSoftmax { x, axis }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect());
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or(&0);
        let (sg, sb) = (self.shape(gamma), self.shape(beta));
        if sg != [d] || sb != [d] {
            return Err(mismatch("layer_norm", &[&s, sg, sb]));
        }
        let rows = s.iter().product::<usize>() / d;
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let op = Op::LayerNorm { x, gamma, beta, xhat, rstd };
        Ok(self.push(Tensor::from_parts(s, out), op, rg))
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(attr(
                "cross_entropy",
                format!("{} targets for logits of shape {s:?}", targets.len()),
            ));
        }
        let (m, n) = (s[0], s[1]);
        if let Some(bad) = targets.iter().find(|&&t| t >= n) {
            return Err(attr("cross_entropy", format!("target {bad} out of range {n}")));
        }
        let logp = softmax_along(self.value(logits).data(), &s, 1, true);
        let loss = -targets.iter().enumerate().map(|(i, &t)| logp[i * n + t]).sum::<f64>() / m as f64;
        let probs = logp.iter().map(|l| l.exp()).collect();
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets` in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        if v.numel() != targets.len() {
            return Err(attr(
                "bce_with_logits",
                format!("{} targets for {} logits", targets.len(), v.numel()),
            ));
        }
        let n = targets.len() as f64;
        let loss = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| t * softplus(-x) + (1.0 - t) * softplus(x))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[logits]);
        let op = Op::BceWithLogits { logits, targets: targets.to_vec() };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Gathers single elements `(row, col)` of a matrix into a vector.
    pub fn pick(&mut self, x: Var, coords: &[(usize, usize)]) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = matrix_dims(v.shape());
        if v.rank() > 2 || coords.is_empty() {
            return Err(attr("pick", "needs a rank <= 2 input and at least one coordinate"));
        }
        if let Some(bad) = coords.iter().find(|(i, j)| *i >= r || *j >= c) {
            return Err(attr("pick", format!("coordinate {bad:?} outside {r}x{c}")));
        }
        let out = coords.iter().map(|&(i, j)| v.data()[i * c + j]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::Pick { x, coords: coords.to_vec() }, rg))
    }

    /// Column scatter-add: `out[:, cols[j]] += x[:, j]` into a `[rows, width]` result.
    pub fn scatter_cols(&mut self, x: Var, cols: &[usize], width: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = matrix_dims(v.shape());
        if v.rank() > 2 || cols.len() != c {
            return Err(attr("scatter_cols", format!("{} targets for {c} columns", cols.len())));
        }
        if let Some(bad) = cols.iter().find(|&&j| j >= width) {
            return Err(attr("scatter_cols", format!("column {bad} outside width {width}")));
        }
        let mut out = vec![0.0; r * width];
        for i in 0..r {
            for (j, &dst) in cols.iter().enumerate() {
                out[i * width + dst] += v.data()[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        let t = Tensor::from_parts(vec![r, width], out);
        Ok(self.push(t, Op::ScatterCols { x, cols: cols.to_vec(), width }, rg))
    }

    /// Emits `sample` forward while routing its gradient to `probs` unchanged.
    pub fn straight_through(&mut self, probs: Var, sample: Tensor) -> Result<Var> {
        if sample.shape() != self.shape(probs) {
            return Err(mismatch("straight_through", &[self.shape(probs), sample.shape()]));
        }
        let rg = self.rg(&[probs]);
        Ok(self.push(sample, Op::StraightThrough { probs }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                if wants(*a) {
                    acc(*a, &mut |s| gemm(m, n, k, g, false, val(*b), true, s, true));
                }
                if wants(*b) {
                    acc(*b, &mut |s| gemm(k, m, n, val(*a), true, g, false, s, true));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (shape(*a)[0], shape(*a)[1]);
                acc(*a, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b, map) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| match map {
                    None => s.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                    Some(m) => m.iter().zip(g).for_each(|(&j, y)| s[j] += y),
                });
            }
            Op::Mul(a, b, map) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| match map {
                    None => s.iter_mut().zip(g.iter().zip(vb)).for_each(|(x, (y, w))| *x += y * w),
                    Some(m) => s.iter_mut().zip(g.iter().zip(m)).for_each(|(x, (y, &j))| *x += y * vb[j]),
                });
                acc(*b, &mut |s| match map {
                    None => s.iter_mut().zip(g.iter().zip(va)).for_each(|(x, (y, w))| *x += y * w),
                    Some(m) => m.iter().zip(g.iter().zip(va)).for_each(|(&j, (y, w))| s[j] += y * w),
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Concat(inputs, axis) => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = axis_extents(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = shape(v)[*axis];
                    acc(v, &mut |s| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut s[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = axis_extents(shape(*x), *axis);
                let width = node.value.shape()[*axis];
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let dst = &mut s[(o * len + start) * inner..(o * len + start + width) * inner];
                        let src = &g[o * width * inner..(o + 1) * width * inner];
                        dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let cols = shape(*table)[1];
                acc(*table, &mut |s| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut s[id * cols..(id + 1) * cols];
                        dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::MaskedFill { x, mask } => acc(*x, &mut |s| {
                for ((x, y), &m) in s.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *x += y;
                    }
                }
            }),
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                s[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let total: f64 = (0..len).map(|j| g[idx(j)]).sum();
                            for j in 0..len {
                                s[idx(j)] += g[idx(j)] - y[idx(j)].exp() * total;
                            }
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |s| {
                    for ((d, gi), yi) in s.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(xv) {
                        *d += gi * gelu_grad(*xi);
                    }
                });
            }
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(xv) {
                        *d += gi / xi;
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = shape(*gamma)[0];
                let rows = rstd.len();
                let gm = val(*gamma);
                acc(*gamma, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j];
                        }
                    }
                });
                acc(*x, &mut |s| {
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..d).map(|j| g[r * d + j] * gm[j]).collect();
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = (0..d).map(|j| dxhat[j] * xhat[r * d + j]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            s[r * d + j] += rstd[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = shape(*logits)[1];
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |s| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..n {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            s[i * n + j] += scale * (probs[i * n + j] - onehot);
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let xv = val(*logits);
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |s| {
                    for ((d, x), t) in s.iter_mut().zip(xv).zip(targets) {
                        *d += scale * (sigmoid(*x) - t);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Pick { x, coords } => {
                let (_, c) = matrix_dims(shape(*x));
                acc(*x, &mut |s| {
                    for (k, &(i, j)) in coords.iter().enumerate() {
                        s[i * c + j] += g[k];
                    }
                });
            }
            Op::ScatterCols { x, cols, width } => {
                let (r, c) = matrix_dims(shape(*x));
                acc(*x, &mut |s| {
                    for i in 0..r {
                        for (j, &dst) in cols.iter().enumerate() {
                            s[i * c + j] += g[i * width + dst];
                        }
                    }
                });
            }
            Op::StraightThrough { probs } => {
                acc(*probs, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
        }
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to any node, or `None` when the node is off the
    /// differentiable path.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(tape.shape(v).to_vec(), g.clone()))
    }

    /// One gradient per stored parameter; parameters never touched get zeros.
    pub fn params(&self, store: &ParamStore) -> ParamGrads {
        let mut out = store.zero_grads();
        self.accumulate_into(&mut out);
        out
    }

    pub fn accumulate_into(&self, out: &mut ParamGrads) {
        for (&id, &var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                out.get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, y)| *x += y);
            }
        }
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn attr(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidAttribute { op, reason: reason.into() }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(attr(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}
