use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Clamp margin applied to `acos` inputs on the differentiable path.
pub const ACOS_EPS: f64 = 1e-7;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    Acos(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations. Nodes are appended in execution order, which
/// is a topological order of the expression graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(|v| self.nodes[v.0].requires_grad),
            Op::Binary(_, a, b) | Op::MatMul(a, b) => self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad,
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Relu(a)
            | Op::Acos(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumCols(a)
            | Op::MeanRows(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::GatherRows(a, _) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// A differentiable leaf that is not a model parameter.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        let v = self.push(value, Op::Leaf, "input")?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    /// A differentiable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Result<Var> {
        self.push(value.clone(), Op::Param(id), "param")
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (r, c) = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(name, format!("{sa:?}"), format!("{sb:?}")))?;
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let ia = if sa.0 == 1 { 0 } else { i };
            let ib = if sb.0 == 1 { 0 } else { i };
            for j in 0..c {
                let u = x.get(ia, if sa.1 == 1 { 0 } else { j });
                let v = y.get(ib, if sb.1 == 1 { 0 } else { j });
                out.push(match kind {
                    BinaryKind::Add => u + v,
                    BinaryKind::Sub => u - v,
                    BinaryKind::Mul => u * v,
                    BinaryKind::Div => u / v,
                });
            }
        }
        self.push(Tensor::new(r, c, out)?, Op::Binary(kind, a, b), name)
    }

    /// Elementwise sum; either side may broadcast along a unit dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b, "div")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k), "scale")
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::Offset(a), "offset")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::shape(
                "matmul",
                format!("{sa:?} x ({}, _)", sa.1),
                format!("{sb:?}"),
            ));
        }
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), "log")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a), "sqrt")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), "relu")
    }

    /// `acos(clamp(x, -1 + eps, 1 - eps))`; zero gradient where the clamp is active.
    pub fn acos(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS).acos());
        self.push(v, Op::Acos(a), "acos")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "non-empty", "empty"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let r = v.len();
        self.push(Tensor::new(r, 1, v)?, Op::SumCols(a), "sum_cols")
    }

    /// Mean over rows as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::shape("mean_rows", "at least one row", 0));
        }
        let mut v = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (acc, x) in v.iter_mut().zip(t.row(r)) {
                *acc += x;
            }
        }
        let n = t.rows() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        self.push(Tensor::row_vector(v), Op::MeanRows(a), "mean_rows")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|x| (x - m).exp()));
            let s: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|x| *x /= s);
        }
        let (r, c) = t.shape();
        self.push(Tensor::new(r, c, out)?, Op::SoftmaxRows(a), "softmax")
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, without gain or bias.
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.shape();
        let mut out = Vec::with_capacity(t.len());
        for i in 0..r {
            let row = t.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            out.extend(row.iter().map(|x| (x - mu) * inv));
        }
        self.push(Tensor::new(r, c, out)?, Op::LayerNormRows(a), "layer_norm")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "at least one part", 0));
        };
        let c = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(Error::shape("concat_rows", c, t.cols()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(
            Tensor::new(rows, c, data)?,
            Op::ConcatRows(parts.to_vec()),
            "concat_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "at least one part", 0));
        };
        let r = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != r) {
            return Err(Error::shape("concat_cols", r, self.shape(bad).0));
        }
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::new(r, c, data)?, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows() {
            return Err(Error::shape("slice_rows", format!("<= {}", t.rows()), start + len));
        }
        let c = t.cols();
        let data = t.data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::new(len, c, data)?, Op::SliceRows(a, start), "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(Error::shape("slice_cols", format!("<= {}", t.cols()), start + len));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let rows = t.rows();
        self.push(Tensor::new(rows, len, data)?, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), "transpose")
    }

    /// Reinterpret the row-major data under a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if rows * cols != t.len() {
            return Err(Error::shape("reshape", t.len(), rows * cols));
        }
        let v = t.clone().reshaped(rows, cols);
        self.push(v, Op::Reshape(a), "reshape")
    }

    /// Rows of `a` picked by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape("gather_rows", format!("index < {}", t.rows()), bad));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let c = t.cols();
        self.push(
            Tensor::new(idx.len(), c, data)?,
            Op::GatherRows(a, idx.to_vec()),
            "gather_rows",
        )
    }

    /// `x W + b` for a row-stacked input.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Dot product of matching rows, as an `r x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_cols(p)
    }

    /// Rows scaled to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let sq = self.square(a)?;
        let n2 = self.sum_cols(sq)?;
        let n = self.sqrt(n2)?;
        self.div(a, n)
    }

    /// Pairwise cosine similarities of the rows of `a`.
    pub fn cosine_similarity_matrix(&mut self, a: Var) -> Result<Var> {
        let u = self.normalize_rows(a)?;
        let ut = self.transpose(u)?;
        self.matmul(u, ut)
    }

    /// `log(sum(exp(a)))` over all entries, shifted by the maximum for stability.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::shape("logsumexp", "non-empty finite input", "empty"));
        }
        let shifted = self.offset(a, -m)?;
        let e = self.exp(shifted)?;
        let s = self.sum(e)?;
        let l = self.log(s)?;
        self.offset(l, m)
    }

    /// Reverse sweep from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(Error::shape("backward", "1x1 loss", format!("{:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            graph_len: self.nodes.len(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Binary(kind, a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (sa, sb) = (x.shape(), y.shape());
                let (r, c) = out.shape();
                let mut ga = Tensor::zeros(sa.0, sa.1);
                let mut gb = Tensor::zeros(sb.0, sb.1);
                for i in 0..r {
                    let ia = if sa.0 == 1 { 0 } else { i };
                    let ib = if sb.0 == 1 { 0 } else { i };
                    for j in 0..c {
                        let ja = if sa.1 == 1 { 0 } else { j };
                        let jb = if sb.1 == 1 { 0 } else { j };
                        let gij = g.get(i, j);
                        let u = x.get(ia, ja);
                        let v = y.get(ib, jb);
                        let (da, db) = match kind {
                            BinaryKind::Add => (gij, gij),
                            BinaryKind::Sub => (gij, -gij),
                            BinaryKind::Mul => (gij * v, gij * u),
                            BinaryKind::Div => (gij / v, -gij * u / (v * v)),
                        };
                        ga.data_mut()[ia * sa.1 + ja] += da;
                        gb.data_mut()[ib * sb.1 + jb] += db;
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|x| x * k));
            }
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, matmul_nt(g, y));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, matmul_tn(x, g));
                }
            }
            Op::Exp(a) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().zip(out.data()).for_each(|(d, y)| *d *= y);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let mut d = g.clone();
                let x = self.value(*a);
                d.data_mut().iter_mut().zip(x.data()).for_each(|(d, x)| *d /= x);
                self.accumulate(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().zip(out.data()).for_each(|(d, y)| *d /= 2.0 * y);
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                let x = self.value(*a);
                d.data_mut().iter_mut().zip(x.data()).for_each(|(d, x)| {
                    if *x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Acos(a) => {
                let mut d = g.clone();
                let x = self.value(*a);
                d.data_mut().iter_mut().zip(x.data()).for_each(|(d, &x)| {
                    if x.abs() < 1.0 - ACOS_EPS {
                        *d *= -1.0 / (1.0 - x * x).sqrt();
                    } else {
                        *d = 0.0;
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                let n = (r * c) as f64;
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / n));
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    d.data_mut()[i * c..(i + 1) * c].iter_mut().for_each(|x| *x = gi);
                }
                self.accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                let n = r as f64;
                for i in 0..r {
                    for j in 0..c {
                        d.data_mut()[i * c + j] = g.get(0, j) / n;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = out.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let s: f64 = y.iter().zip(gy).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        d.data_mut()[i * c + j] = y[j] * (gy[j] - s);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNormRows(a) => {
                let x = self.value(*a);
                let (r, c) = x.shape();
                let n = c as f64;
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let row = x.row(i);
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let y = out.row(i);
                    let gy = g.row(i);
                    let mean_g = gy.iter().sum::<f64>() / n;
                    let mean_gy = gy.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / n;
                    for j in 0..c {
                        d.data_mut()[i * c + j] = inv * (gy[j] - mean_g - y[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let c = out.cols();
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let d = Tensor::new(rows, c, g.data()[start * c..(start + rows) * c].to_vec())
                        .expect("slice of gradient matches part");
                    start += rows;
                    self.accumulate(grads, p, d);
                }
            }
            Op::ConcatCols(parts) => {
                let r = out.rows();
                let mut start = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        data.extend_from_slice(&g.row(i)[start..start + c]);
                    }
                    start += c;
                    self.accumulate(grads, p, Tensor::new(r, c, data).expect("column block"));
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let len = g.cols();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, g.clone().reshaped(r, c));
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (x, y) in d.data_mut()[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *x += y;
                    }
                }
                self.accumulate(grads, *a, d);
            }
        }
    }

    /// Parameter id of every parameter leaf, in recording order.
    fn param_leaves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(p) => Some((i, p)),
            _ => None,
        })
    }

    /// Sum of gradients over every leaf registered for each parameter id.
    pub fn param_grads(&self, grads: &Gradients, num_params: usize) -> Vec<Option<Tensor>> {
        debug_assert_eq!(grads.graph_len, self.nodes.len());
        let mut out: Vec<Option<Tensor>> = vec![None; num_params];
        for (node, p) in self.param_leaves() {
            if let Some(g) = &grads.grads[node] {
                match &mut out[p] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    graph_len: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
