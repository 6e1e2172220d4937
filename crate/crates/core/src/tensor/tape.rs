//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every operation validates shapes eagerly, computes its result, and pushes
//! one record. `backward` replays the records in reverse, accumulating
//! vector-Jacobian products into per-node gradient buffers. Nodes that no
//! differentiable leaf feeds into are skipped.

use super::Tensor;
use crate::{HinError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

/// Which backward rule a test fault corrupts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    Tanh,
    Sigmoid,
    Matmul,
}

/// Test-only corruption of one backward rule, for exercising the gradient
/// checker's failure path. Never set in normal operation.
#[derive(Clone, Copy, Debug)]
pub struct Fault {
    pub kind: FaultKind,
    pub scale: f64,
}

impl Fault {
    pub fn parse(name: &str) -> Option<Fault> {
        let kind = match name {
            "tanh" => FaultKind::Tanh,
            "sigmoid" => FaultKind::Sigmoid,
            "matmul" => FaultKind::Matmul,
            _ => return None,
        };
        Some(Fault { kind, scale: 1.01 })
    }
}

struct Node {
    tensor: Tensor,
    /// Whether any differentiable leaf feeds this node.
    needs: bool,
}

enum Op {
    Matmul { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    /// y = A · Bᵀ with A [m×k], B [n×k].
    MatmulBt { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    /// y = A · x with A [m×k], x [k].
    MatVec { a: usize, x: usize, out: usize, m: usize, k: usize },
    /// y = Aᵀ · x with A [m×k], x [m].
    MatVecT { a: usize, x: usize, out: usize, m: usize, k: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Hadamard { a: usize, b: usize, out: usize },
    Scale { x: usize, c: f64, out: usize },
    Tanh { x: usize, out: usize },
    Sigmoid { x: usize, out: usize },
    Relu { x: usize, out: usize },
    ConcatLast { parts: Vec<usize>, widths: Vec<usize>, rows: usize, out: usize },
    StackRows { rows: Vec<usize>, width: usize, out: usize },
    GatherRows { src: usize, ids: Vec<usize>, width: usize, out: usize },
    Row { src: usize, index: usize, width: usize, out: usize },
    SliceVec { src: usize, start: usize, len: usize, out: usize },
    MeanAxis0 { src: usize, rows: usize, cols: usize, out: usize },
    Dot { a: usize, b: usize, out: usize },
    SumAll { x: usize, out: usize },
    MaskedSoftmax { scores: usize, mask: Vec<bool>, out: usize },
    /// pooled_j = Σ_t w_t · H[t, j].
    WeightedSumRows { rows: usize, weights: usize, n: usize, d: usize, out: usize },
    /// out_i = Σ_jk a_j · R[j,k,i] · b_k with R rank-3 [ds×ds×ds].
    Biaffine { r: usize, a: usize, b: usize, ds: usize, out: usize },
    /// Summed binary cross entropy against a fixed 0/1 target vector.
    BceLoss { probs: usize, target: Vec<f64>, out: usize },
}

const BCE_CLAMP: f64 = 1e-12;

/// Tape of recorded operations. Single-writer: one tape serves one logical
/// forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
    relu_margin: f64,
    fault: Option<Fault>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            relu_margin: f64::INFINITY,
            fault: None,
        }
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Smallest |x| seen at any ReLU input during forward passes on this
    /// tape. Finite-difference probes near a kink are unreliable; the
    /// gradient checker resamples when this margin gets too small.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, tensor: Tensor, needs: bool) -> Value {
        let id = self.nodes.len();
        self.nodes.push(Node { tensor, needs });
        self.grads.push(None);
        Value(id)
    }

    /// Register a leaf. Differentiation reaches it iff `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Value {
        let needs = tensor.requires_grad;
        self.push(tensor, needs)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Value {
        self.push(tensor, false)
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Value {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Value {
        self.constant(Tensor::zeros(shape))
    }

    pub fn tensor(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].tensor.data
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    /// Accumulated gradient, if any reached this node.
    pub fn grad(&self, v: Value) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient with non-participating nodes read as zero.
    pub fn grad_or_zeros(&self, v: Value) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].tensor.len()],
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs
    }

    fn check_same_shape(&self, op: &'static str, a: Value, b: Value) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(HinError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, v: Value) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(HinError::ShapeMismatch {
                op,
                lhs: other.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    fn rank1(&self, op: &'static str, v: Value) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            other => Err(HinError::ShapeMismatch {
                op,
                lhs: other.to_vec(),
                rhs: vec![0],
            }),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(HinError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let da = self.data(a);
        let db = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ra = &da[i * k..(i + 1) * k];
            for j in 0..n {
                let mut acc = 0.0;
                for (kk, av) in ra.iter().enumerate() {
                    acc += av * db[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        let v = self.push(Tensor::new(vec![m, n], out)?, needs);
        self.ops.push(Op::Matmul { a: a.0, b: b.0, out: v.0, m, k, n });
        Ok(v)
    }

    /// A · Bᵀ. Rows of both operands are contiguous, so this is the
    /// cache-friendly orientation for attention scores.
    pub fn matmul_bt(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, k) = self.rank2("matmul_bt", a)?;
        let (n, k2) = self.rank2("matmul_bt", b)?;
        if k != k2 {
            return Err(HinError::ShapeMismatch {
                op: "matmul_bt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let da = self.data(a);
        let db = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ra = &da[i * k..(i + 1) * k];
            for j in 0..n {
                let rb = &db[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += ra[kk] * rb[kk];
                }
                out[i * n + j] = acc;
            }
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        let v = self.push(Tensor::new(vec![m, n], out)?, needs);
        self.ops.push(Op::MatmulBt { a: a.0, b: b.0, out: v.0, m, k, n });
        Ok(v)
    }

    pub fn matvec(&mut self, a: Value, x: Value) -> Result<Value> {
        let (m, k) = self.rank2("matvec", a)?;
        let xn = self.rank1("matvec", x)?;
        if k != xn {
            return Err(HinError::ShapeMismatch {
                op: "matvec",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let da = self.data(a);
        let dx = self.data(x);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let ra = &da[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += ra[kk] * dx[kk];
            }
            out[i] = acc;
        }
        let needs = self.needs(a.0) || self.needs(x.0);
        let v = self.push(Tensor::vector(out), needs);
        self.ops.push(Op::MatVec { a: a.0, x: x.0, out: v.0, m, k });
        Ok(v)
    }

    /// Aᵀ · x for A [m×k], x [m].
    pub fn matvec_t(&mut self, a: Value, x: Value) -> Result<Value> {
        let (m, k) = self.rank2("matvec_t", a)?;
        let xn = self.rank1("matvec_t", x)?;
        if m != xn {
            return Err(HinError::ShapeMismatch {
                op: "matvec_t",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let da = self.data(a);
        let dx = self.data(x);
        let mut out = vec![0.0; k];
        for i in 0..m {
            let ra = &da[i * k..(i + 1) * k];
            let xi = dx[i];
            for j in 0..k {
                out[j] += ra[j] * xi;
            }
        }
        let needs = self.needs(a.0) || self.needs(x.0);
        let v = self.push(Tensor::vector(out), needs);
        self.ops.push(Op::MatVecT { a: a.0, x: x.0, out: v.0, m, k });
        Ok(v)
    }

    fn binary_elementwise(
        &mut self,
        op: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Value> {
        self.check_same_shape(op, a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Tensor::new(shape, data)?, needs))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let v = self.binary_elementwise("add", a, b, |x, y| x + y)?;
        self.ops.push(Op::Add { a: a.0, b: b.0, out: v.0 });
        Ok(v)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        let v = self.binary_elementwise("sub", a, b, |x, y| x - y)?;
        self.ops.push(Op::Sub { a: a.0, b: b.0, out: v.0 });
        Ok(v)
    }

    pub fn hadamard(&mut self, a: Value, b: Value) -> Result<Value> {
        let v = self.binary_elementwise("hadamard", a, b, |x, y| x * y)?;
        self.ops.push(Op::Hadamard { a: a.0, b: b.0, out: v.0 });
        Ok(v)
    }

    /// Scalar-by-tensor product, the one permitted broadcast.
    pub fn scale(&mut self, x: Value, c: f64) -> Result<Value> {
        let data: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.0);
        let v = self.push(Tensor::new(shape, data)?, needs);
        self.ops.push(Op::Scale { x: x.0, c, out: v.0 });
        Ok(v)
    }

    pub fn tanh(&mut self, x: Value) -> Result<Value> {
        let data: Vec<f64> = self.data(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.0);
        let v = self.push(Tensor::new(shape, data)?, needs);
        self.ops.push(Op::Tanh { x: x.0, out: v.0 });
        Ok(v)
    }

    /// Numerically stable logistic function. Saturates to the nearest
    /// representable values strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Value) -> Result<Value> {
        let data: Vec<f64> = self.data(x).iter().map(|&v| stable_sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.0);
        let v = self.push(Tensor::new(shape, data)?, needs);
        self.ops.push(Op::Sigmoid { x: x.0, out: v.0 });
        Ok(v)
    }

    pub fn relu(&mut self, x: Value) -> Result<Value> {
        let mut margin = self.relu_margin;
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| {
                margin = margin.min(v.abs());
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        self.relu_margin = margin;
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.0);
        let v = self.push(Tensor::new(shape, data)?, needs);
        self.ops.push(Op::Relu { x: x.0, out: v.0 });
        Ok(v)
    }

    /// Concatenate along the last axis. All parts must share rank (1 or 2)
    /// and leading extent.
    pub fn concat_last(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(HinError::EmptyInput { op: "concat_last" });
        }
        let rank = self.tensor(parts[0]).rank();
        if rank == 1 {
            let widths: Vec<usize> = parts
                .iter()
                .map(|p| self.rank1("concat_last", *p))
                .collect::<Result<_>>()?;
            let mut data = Vec::with_capacity(widths.iter().sum());
            for p in parts {
                data.extend_from_slice(self.data(*p));
            }
            let needs = parts.iter().any(|p| self.needs(p.0));
            let v = self.push(Tensor::vector(data), needs);
            self.ops.push(Op::ConcatLast {
                parts: parts.iter().map(|p| p.0).collect(),
                widths,
                rows: 1,
                out: v.0,
            });
            return Ok(v);
        }
        let (rows, _) = self.rank2("concat_last", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.rank2("concat_last", *p)?;
            if r != rows {
                return Err(HinError::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(*p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        for i in 0..rows {
            let mut off = 0;
            for (p, w) in parts.iter().zip(&widths) {
                let src = &self.data(*p)[i * w..(i + 1) * w];
                data[i * total + off..i * total + off + w].copy_from_slice(src);
                off += w;
            }
        }
        let needs = parts.iter().any(|p| self.needs(p.0));
        let v = self.push(Tensor::new(vec![rows, total], data)?, needs);
        self.ops.push(Op::ConcatLast {
            parts: parts.iter().map(|p| p.0).collect(),
            widths,
            rows,
            out: v.0,
        });
        Ok(v)
    }

    /// Stack rank-1 vectors of equal width into a rank-2 matrix.
    pub fn stack_rows(&mut self, rows: &[Value]) -> Result<Value> {
        if rows.is_empty() {
            return Err(HinError::EmptyInput { op: "stack_rows" });
        }
        let width = self.rank1("stack_rows", rows[0])?;
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let w = self.rank1("stack_rows", *r)?;
            if w != width {
                return Err(HinError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![width],
                    rhs: vec![w],
                });
            }
            data.extend_from_slice(self.data(*r));
        }
        let needs = rows.iter().any(|r| self.needs(r.0));
        let v = self.push(Tensor::new(vec![rows.len(), width], data)?, needs);
        self.ops.push(Op::StackRows {
            rows: rows.iter().map(|r| r.0).collect(),
            width,
            out: v.0,
        });
        Ok(v)
    }

    /// Select rows of a rank-2 tensor by index; the backward pass
    /// scatter-adds into the selected rows only.
    pub fn gather_rows(&mut self, src: Value, ids: &[usize]) -> Result<Value> {
        let (rows, cols) = self.rank2("gather_rows", src)?;
        for &id in ids {
            if id >= rows {
                return Err(HinError::IndexOutOfRange {
                    op: "gather_rows",
                    what: "rows",
                    index: id,
                    size: rows,
                });
            }
        }
        let d = self.data(src);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(&d[id * cols..(id + 1) * cols]);
        }
        let needs = self.needs(src.0);
        let v = self.push(Tensor::new(vec![ids.len(), cols], data)?, needs);
        self.ops.push(Op::GatherRows {
            src: src.0,
            ids: ids.to_vec(),
            width: cols,
            out: v.0,
        });
        Ok(v)
    }

    /// One row of a rank-2 tensor as a rank-1 vector.
    pub fn row(&mut self, src: Value, index: usize) -> Result<Value> {
        let (rows, cols) = self.rank2("row", src)?;
        if index >= rows {
            return Err(HinError::IndexOutOfRange {
                op: "row",
                what: "rows",
                index,
                size: rows,
            });
        }
        let data = self.data(src)[index * cols..(index + 1) * cols].to_vec();
        let needs = self.needs(src.0);
        let v = self.push(Tensor::vector(data), needs);
        self.ops.push(Op::Row {
            src: src.0,
            index,
            width: cols,
            out: v.0,
        });
        Ok(v)
    }

    pub fn slice_vec(&mut self, src: Value, start: usize, len: usize) -> Result<Value> {
        let n = self.rank1("slice_vec", src)?;
        if start + len > n {
            return Err(HinError::IndexOutOfRange {
                op: "slice_vec",
                what: "elements",
                index: start + len,
                size: n,
            });
        }
        let data = self.data(src)[start..start + len].to_vec();
        let needs = self.needs(src.0);
        let v = self.push(Tensor::vector(data), needs);
        self.ops.push(Op::SliceVec {
            src: src.0,
            start,
            len,
            out: v.0,
        });
        Ok(v)
    }

    /// Column means of a rank-2 tensor.
    pub fn mean_axis0(&mut self, src: Value) -> Result<Value> {
        let (rows, cols) = self.rank2("mean_axis0", src)?;
        if rows == 0 {
            return Err(HinError::EmptyInput { op: "mean_axis0" });
        }
        let d = self.data(src);
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += d[i * cols + j];
            }
        }
        let inv = 1.0 / rows as f64;
        for v in &mut out {
            *v *= inv;
        }
        let needs = self.needs(src.0);
        let v = self.push(Tensor::vector(out), needs);
        self.ops.push(Op::MeanAxis0 {
            src: src.0,
            rows,
            cols,
            out: v.0,
        });
        Ok(v)
    }

    pub fn dot(&mut self, a: Value, b: Value) -> Result<Value> {
        let na = self.rank1("dot", a)?;
        let nb = self.rank1("dot", b)?;
        if na != nb {
            return Err(HinError::ShapeMismatch {
                op: "dot",
                lhs: vec![na],
                rhs: vec![nb],
            });
        }
        let acc: f64 = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        let needs = self.needs(a.0) || self.needs(b.0);
        let v = self.push(Tensor::scalar(acc), needs);
        self.ops.push(Op::Dot { a: a.0, b: b.0, out: v.0 });
        Ok(v)
    }

    pub fn sum_all(&mut self, x: Value) -> Result<Value> {
        let acc: f64 = self.data(x).iter().sum();
        let needs = self.needs(x.0);
        let v = self.push(Tensor::scalar(acc), needs);
        self.ops.push(Op::SumAll { x: x.0, out: v.0 });
        Ok(v)
    }

    /// Softmax over the valid positions of a rank-1 score vector, computed
    /// with max-subtraction. Masked positions get weight exactly 0.
    pub fn masked_softmax(&mut self, scores: Value, mask: &[bool]) -> Result<Value> {
        let n = self.rank1("masked_softmax", scores)?;
        if mask.len() != n {
            return Err(HinError::ShapeMismatch {
                op: "masked_softmax",
                lhs: vec![n],
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(HinError::DegenerateMask);
        }
        let d = self.data(scores);
        let mut mx = f64::NEG_INFINITY;
        for (s, &m) in d.iter().zip(mask) {
            if m && *s > mx {
                mx = *s;
            }
        }
        let mut out = vec![0.0; n];
        let mut denom = 0.0;
        for i in 0..n {
            if mask[i] {
                let e = (d[i] - mx).exp();
                out[i] = e;
                denom += e;
            }
        }
        for v in &mut out {
            *v /= denom;
        }
        let needs = self.needs(scores.0);
        let v = self.push(Tensor::vector(out), needs);
        self.ops.push(Op::MaskedSoftmax {
            scores: scores.0,
            mask: mask.to_vec(),
            out: v.0,
        });
        Ok(v)
    }

    /// Weighted sum of the rows of H [n×d] with weights w [n].
    pub fn weighted_sum_rows(&mut self, rows: Value, weights: Value) -> Result<Value> {
        let (n, d) = self.rank2("weighted_sum_rows", rows)?;
        let wn = self.rank1("weighted_sum_rows", weights)?;
        if n != wn {
            return Err(HinError::ShapeMismatch {
                op: "weighted_sum_rows",
                lhs: vec![n, d],
                rhs: vec![wn],
            });
        }
        let h = self.data(rows);
        let w = self.data(weights);
        let mut out = vec![0.0; d];
        for t in 0..n {
            let r = &h[t * d..(t + 1) * d];
            let wt = w[t];
            for j in 0..d {
                out[j] += wt * r[j];
            }
        }
        let needs = self.needs(rows.0) || self.needs(weights.0);
        let v = self.push(Tensor::vector(out), needs);
        self.ops.push(Op::WeightedSumRows {
            rows: rows.0,
            weights: weights.0,
            n,
            d,
            out: v.0,
        });
        Ok(v)
    }

    /// out_i = aᵀ · R[·,·,i] · b for a rank-3 tensor R of shape [ds,ds,ds].
    pub fn biaffine(&mut self, a: Value, b: Value, r: Value) -> Result<Value> {
        let ds = self.rank1("biaffine", a)?;
        let db = self.rank1("biaffine", b)?;
        let rshape = self.shape(r).to_vec();
        if db != ds || rshape != vec![ds, ds, ds] {
            return Err(HinError::ShapeMismatch {
                op: "biaffine",
                lhs: vec![ds, db],
                rhs: rshape,
            });
        }
        let va = self.data(a);
        let vb = self.data(b);
        let vr = self.data(r);
        let mut out = vec![0.0; ds];
        for i in 0..ds {
            let mut acc = 0.0;
            for j in 0..ds {
                for k in 0..ds {
                    acc += va[j] * vr[(j * ds + k) * ds + i] * vb[k];
                }
            }
            out[i] = acc;
        }
        let needs = self.needs(a.0) || self.needs(b.0) || self.needs(r.0);
        let v = self.push(Tensor::vector(out), needs);
        self.ops.push(Op::Biaffine {
            r: r.0,
            a: a.0,
            b: b.0,
            ds,
            out: v.0,
        });
        Ok(v)
    }

    /// Summed binary cross entropy of probabilities against a 0/1 target.
    /// Log arguments are clamped at 1e-12; the backward rule is the exact
    /// derivative of the clamped forward.
    pub fn bce_loss(&mut self, probs: Value, target: &[f64]) -> Result<Value> {
        let n = self.rank1("bce_loss", probs)?;
        if target.len() != n {
            return Err(HinError::ShapeMismatch {
                op: "bce_loss",
                lhs: vec![n],
                rhs: vec![target.len()],
            });
        }
        let p = self.data(probs);
        let mut loss = 0.0;
        for i in 0..n {
            let y = target[i];
            // clamp (unlike max) propagates NaN, so a poisoned forward
            // still surfaces as a non-finite loss.
            loss -= y * p[i].clamp(BCE_CLAMP, f64::INFINITY).ln()
                + (1.0 - y) * (1.0 - p[i]).clamp(BCE_CLAMP, f64::INFINITY).ln();
        }
        let needs = self.needs(probs.0);
        let v = self.push(Tensor::scalar(loss), needs);
        self.ops.push(Op::BceLoss {
            probs: probs.0,
            target: target.to_vec(),
            out: v.0,
        });
        Ok(v)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. The loss seed is 1. Each call runs
    /// a fresh sweep and adds its result into the per-node accumulators, so
    /// repeated calls without zeroing sum.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(HinError::invalid("backward", "loss value is not on this tape"));
        }
        if !self.nodes[loss.0].tensor.is_scalar() {
            return Err(HinError::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        pass[loss.0] = Some(vec![1.0]);
        for idx in (0..self.ops.len()).rev() {
            self.backward_op(idx, &mut pass);
        }
        for (acc, new) in self.grads.iter_mut().zip(pass) {
            if let Some(g) = new {
                match acc {
                    Some(a) => {
                        for (av, gv) in a.iter_mut().zip(&g) {
                            *av += gv;
                        }
                    }
                    None => *acc = Some(g),
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, pass: &mut [Option<Vec<f64>>], id: usize, contrib: &[f64]) {
        if !self.nodes[id].needs {
            return;
        }
        match &mut pass[id] {
            Some(g) => {
                for (a, c) in g.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            None => pass[id] = Some(contrib.to_vec()),
        }
    }

    fn fault_scale(&self, kind: FaultKind) -> f64 {
        match self.fault {
            Some(f) if f.kind == kind => f.scale,
            _ => 1.0,
        }
    }

    fn backward_op(&self, idx: usize, pass: &mut [Option<Vec<f64>>]) {
        // Ops never alias their output with an input, so reading node data
        // while accumulating into the sweep buffers is safe.
        let op = &self.ops[idx];
        match op {
            Op::Matmul { a, b, out, m, k, n } => {
                let (a, b, out, m, k, n) = (*a, *b, *out, *m, *k, *n);
                let Some(g) = pass[out].clone() else { return };
                let fs = self.fault_scale(FaultKind::Matmul);
                if self.needs(a) {
                    let db = &self.nodes[b].tensor.data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j] * fs;
                            for kk in 0..k {
                                da[i * k + kk] += gij * db[kk * n + j];
                            }
                        }
                    }
                    self.accumulate(pass, a, &da);
                }
                if self.needs(b) {
                    let daa = &self.nodes[a].tensor.data;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let av = daa[i * k + kk] * fs;
                            for j in 0..n {
                                db[kk * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(pass, b, &db);
                }
            }
            Op::MatmulBt { a, b, out, m, k, n } => {
                let (a, b, out, m, k, n) = (*a, *b, *out, *m, *k, *n);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(a) {
                    let db = &self.nodes[b].tensor.data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let rb = &db[j * k..(j + 1) * k];
                            for kk in 0..k {
                                da[i * k + kk] += gij * rb[kk];
                            }
                        }
                    }
                    self.accumulate(pass, a, &da);
                }
                if self.needs(b) {
                    let daa = &self.nodes[a].tensor.data;
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        let ra = &daa[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for kk in 0..k {
                                db[j * k + kk] += gij * ra[kk];
                            }
                        }
                    }
                    self.accumulate(pass, b, &db);
                }
            }
            Op::MatVec { a, x, out, m, k } => {
                let (a, x, out, m, k) = (*a, *x, *out, *m, *k);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(a) {
                    let dx = &self.nodes[x].tensor.data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = g[i];
                        for j in 0..k {
                            da[i * k + j] = gi * dx[j];
                        }
                    }
                    self.accumulate(pass, a, &da);
                }
                if self.needs(x) {
                    let daa = &self.nodes[a].tensor.data;
                    let mut dx = vec![0.0; k];
                    for i in 0..m {
                        let gi = g[i];
                        let ra = &daa[i * k..(i + 1) * k];
                        for j in 0..k {
                            dx[j] += gi * ra[j];
                        }
                    }
                    self.accumulate(pass, x, &dx);
                }
            }
            Op::MatVecT { a, x, out, m, k } => {
                let (a, x, out, m, k) = (*a, *x, *out, *m, *k);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(a) {
                    let dx = &self.nodes[x].tensor.data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let xi = dx[i];
                        for j in 0..k {
                            da[i * k + j] = xi * g[j];
                        }
                    }
                    self.accumulate(pass, a, &da);
                }
                if self.needs(x) {
                    let daa = &self.nodes[a].tensor.data;
                    let mut dx = vec![0.0; m];
                    for i in 0..m {
                        let ra = &daa[i * k..(i + 1) * k];
                        let mut acc = 0.0;
                        for j in 0..k {
                            acc += ra[j] * g[j];
                        }
                        dx[i] = acc;
                    }
                    self.accumulate(pass, x, &dx);
                }
            }
            Op::Add { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = pass[out].clone() else { return };
                self.accumulate(pass, a, &g);
                self.accumulate(pass, b, &g);
            }
            Op::Sub { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = pass[out].clone() else { return };
                self.accumulate(pass, a, &g);
                if self.needs(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.accumulate(pass, b, &neg);
                }
            }
            Op::Hadamard { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(a) {
                    let db = &self.nodes[b].tensor.data;
                    let da: Vec<f64> = g.iter().zip(db).map(|(gv, bv)| gv * bv).collect();
                    self.accumulate(pass, a, &da);
                }
                if self.needs(b) {
                    let daa = &self.nodes[a].tensor.data;
                    let db: Vec<f64> = g.iter().zip(daa).map(|(gv, av)| gv * av).collect();
                    self.accumulate(pass, b, &db);
                }
            }
            Op::Scale { x, c, out } => {
                let (x, c, out) = (*x, *c, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(x) {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    self.accumulate(pass, x, &dx);
                }
            }
            Op::Tanh { x, out } => {
                let (x, out) = (*x, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(x) {
                    let fs = self.fault_scale(FaultKind::Tanh);
                    let y = &self.nodes[out].tensor.data;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| gv * (1.0 - yv * yv) * fs)
                        .collect();
                    self.accumulate(pass, x, &dx);
                }
            }
            Op::Sigmoid { x, out } => {
                let (x, out) = (*x, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(x) {
                    let fs = self.fault_scale(FaultKind::Sigmoid);
                    let y = &self.nodes[out].tensor.data;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| gv * yv * (1.0 - yv) * fs)
                        .collect();
                    self.accumulate(pass, x, &dx);
                }
            }
            Op::Relu { x, out } => {
                let (x, out) = (*x, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(x) {
                    // Subgradient 0 at exactly 0.
                    let xv = &self.nodes[x].tensor.data;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.accumulate(pass, x, &dx);
                }
            }
            Op::ConcatLast { parts, widths, rows, out } => {
                let (parts, widths, rows, out) = (parts.clone(), widths.clone(), *rows, *out);
                let Some(g) = pass[out].clone() else { return };
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    if self.needs(*p) {
                        let mut dp = vec![0.0; rows * w];
                        for i in 0..rows {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        self.accumulate(pass, *p, &dp);
                    }
                    off += w;
                }
            }
            Op::StackRows { rows, width, out } => {
                let (rows, width, out) = (rows.clone(), *width, *out);
                let Some(g) = pass[out].clone() else { return };
                for (t, r) in rows.iter().enumerate() {
                    if self.needs(*r) {
                        self.accumulate(pass, *r, &g[t * width..(t + 1) * width]);
                    }
                }
            }
            Op::GatherRows { src, ids, width, out } => {
                let (src, ids, width, out) = (*src, ids.clone(), *width, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(src) {
                    let rows = self.nodes[src].tensor.len() / width;
                    let mut ds = vec![0.0; rows * width];
                    for (t, &id) in ids.iter().enumerate() {
                        for j in 0..width {
                            ds[id * width + j] += g[t * width + j];
                        }
                    }
                    self.accumulate(pass, src, &ds);
                }
            }
            Op::Row { src, index, width, out } => {
                let (src, index, width, out) = (*src, *index, *width, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(src) {
                    let len = self.nodes[src].tensor.len();
                    let mut ds = vec![0.0; len];
                    ds[index * width..(index + 1) * width].copy_from_slice(&g);
                    self.accumulate(pass, src, &ds);
                }
            }
            Op::SliceVec { src, start, len, out } => {
                let (src, start, len, out) = (*src, *start, *len, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(src) {
                    let total = self.nodes[src].tensor.len();
                    let mut ds = vec![0.0; total];
                    ds[start..start + len].copy_from_slice(&g);
                    self.accumulate(pass, src, &ds);
                }
            }
            Op::MeanAxis0 { src, rows, cols, out } => {
                let (src, rows, cols, out) = (*src, *rows, *cols, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(src) {
                    let inv = 1.0 / rows as f64;
                    let mut ds = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            ds[i * cols + j] = g[j] * inv;
                        }
                    }
                    self.accumulate(pass, src, &ds);
                }
            }
            Op::Dot { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = pass[out].clone() else { return };
                let gv = g[0];
                if self.needs(a) {
                    let db = &self.nodes[b].tensor.data;
                    let da: Vec<f64> = db.iter().map(|v| gv * v).collect();
                    self.accumulate(pass, a, &da);
                }
                if self.needs(b) {
                    let daa = &self.nodes[a].tensor.data;
                    let db: Vec<f64> = daa.iter().map(|v| gv * v).collect();
                    self.accumulate(pass, b, &db);
                }
            }
            Op::SumAll { x, out } => {
                let (x, out) = (*x, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(x) {
                    let n = self.nodes[x].tensor.len();
                    self.accumulate(pass, x, &vec![g[0]; n]);
                }
            }
            Op::MaskedSoftmax { scores, mask, out } => {
                let (scores, mask, out) = (*scores, mask.clone(), *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(scores) {
                    let w = &self.nodes[out].tensor.data;
                    let mut dot = 0.0;
                    for i in 0..w.len() {
                        if mask[i] {
                            dot += g[i] * w[i];
                        }
                    }
                    let ds: Vec<f64> = (0..w.len())
                        .map(|i| if mask[i] { w[i] * (g[i] - dot) } else { 0.0 })
                        .collect();
                    self.accumulate(pass, scores, &ds);
                }
            }
            Op::WeightedSumRows { rows, weights, n, d, out } => {
                let (rows, weights, n, d, out) = (*rows, *weights, *n, *d, *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(rows) {
                    let w = &self.nodes[weights].tensor.data;
                    let mut dh = vec![0.0; n * d];
                    for t in 0..n {
                        let wt = w[t];
                        for j in 0..d {
                            dh[t * d + j] = wt * g[j];
                        }
                    }
                    self.accumulate(pass, rows, &dh);
                }
                if self.needs(weights) {
                    let h = &self.nodes[rows].tensor.data;
                    let mut dw = vec![0.0; n];
                    for t in 0..n {
                        let r = &h[t * d..(t + 1) * d];
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += r[j] * g[j];
                        }
                        dw[t] = acc;
                    }
                    self.accumulate(pass, weights, &dw);
                }
            }
            Op::Biaffine { r, a, b, ds, out } => {
                let (r, a, b, ds, out) = (*r, *a, *b, *ds, *out);
                let Some(g) = pass[out].clone() else { return };
                let va = self.nodes[a].tensor.data.clone();
                let vb = self.nodes[b].tensor.data.clone();
                if self.needs(a) {
                    let vr = &self.nodes[r].tensor.data;
                    let mut da = vec![0.0; ds];
                    for j in 0..ds {
                        let mut acc = 0.0;
                        for k in 0..ds {
                            for i in 0..ds {
                                acc += g[i] * vr[(j * ds + k) * ds + i] * vb[k];
                            }
                        }
                        da[j] = acc;
                    }
                    self.accumulate(pass, a, &da);
                }
                if self.needs(b) {
                    let vr = &self.nodes[r].tensor.data;
                    let mut db = vec![0.0; ds];
                    for k in 0..ds {
                        let mut acc = 0.0;
                        for j in 0..ds {
                            for i in 0..ds {
                                acc += g[i] * va[j] * vr[(j * ds + k) * ds + i];
                            }
                        }
                        db[k] = acc;
                    }
                    self.accumulate(pass, b, &db);
                }
                if self.needs(r) {
                    let mut dr = vec![0.0; ds * ds * ds];
                    for j in 0..ds {
                        for k in 0..ds {
                            let ab = va[j] * vb[k];
                            for i in 0..ds {
                                dr[(j * ds + k) * ds + i] = ab * g[i];
                            }
                        }
                    }
                    self.accumulate(pass, r, &dr);
                }
            }
            Op::BceLoss { probs, target, out } => {
                let (probs, target, out) = (*probs, target.clone(), *out);
                let Some(g) = pass[out].clone() else { return };
                if self.needs(probs) {
                    let gv = g[0];
                    let p = &self.nodes[probs].tensor.data;
                    let dp: Vec<f64> = p
                        .iter()
                        .zip(&target)
                        .map(|(&pi, &y)| {
                            let mut d = 0.0;
                            if pi > BCE_CLAMP {
                                d -= y / pi;
                            }
                            if 1.0 - pi > BCE_CLAMP {
                                d += (1.0 - y) / (1.0 - pi);
                            }
                            gv * d
                        })
                        .collect();
                    self.accumulate(pass, probs, &dp);
                }
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
