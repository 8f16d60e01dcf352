//! Dense tensor computation core with reverse-mode differentiation.
//!
//! Values live on a [`Tape`]: every forward operation appends a node holding
//! the result and a record of its inputs, and [`Tape::backward`] replays the
//! tape once in reverse to accumulate gradients into every node that requires
//! them. Data is row-major `f64`. Broadcasting is restricted to
//! singleton extents between equal-rank shapes; there is no implicit rank
//! promotion (rank changes are explicit via [`Tape::broadcast_rows`],
//! [`Tape::stack_rows`] and [`Tape::reshape`]).
//!
//! The tape also counts multiply-accumulate operations per [`MacScope`] so
//! that forward passes can be cost-instrumented without touching the math.

use thiserror::Error;

/// Plain dense tensor: shape extents plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::BadConstruction {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor {
            shape: vec![v.len()],
            data: v,
        }
    }

    /// Row-major matrix from nested rows; all rows must have equal length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::Ragged);
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not hold {len} values")]
    BadConstruction { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: lhs {lhs:?} vs rhs {rhs:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("ragged shapes in concat/stack")]
    Ragged,
    #[error("empty tensor list")]
    EmptyList,
    #[error("index {index} out of bounds for extent {extent}")]
    IndexOutOfBounds { index: usize, extent: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called twice without a fresh tape")]
    BackwardTwice,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("function is not deterministic: two evaluations differ ({a} vs {b})")]
    NonDeterministic { a: f64, b: f64 },
}

/// Cost-attribution scope for multiply-accumulate counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacScope {
    ClipRelation,
    GroupRelation,
    VideoRelation,
    Encoder,
    Pool,
    Decoder,
    Other,
}

pub const MAC_SCOPES: [MacScope; 7] = [
    MacScope::ClipRelation,
    MacScope::GroupRelation,
    MacScope::VideoRelation,
    MacScope::Encoder,
    MacScope::Pool,
    MacScope::Decoder,
    MacScope::Other,
];

impl MacScope {
    fn index(self) -> usize {
        match self {
            MacScope::ClipRelation => 0,
            MacScope::GroupRelation => 1,
            MacScope::VideoRelation => 2,
            MacScope::Encoder => 3,
            MacScope::Pool => 4,
            MacScope::Decoder => 5,
            MacScope::Other => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MacScope::ClipRelation => "clip_relation",
            MacScope::GroupRelation => "group_relation",
            MacScope::VideoRelation => "video_relation",
            MacScope::Encoder => "encoder",
            MacScope::Pool => "pool",
            MacScope::Decoder => "decoder",
            MacScope::Other => "other",
        }
    }
}

/// Per-scope multiply-accumulate totals, split by operation family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounters {
    /// Linear-map MACs (rows x in x out).
    pub linear: u64,
    /// Aggregation MACs: list means realised as scaled accumulation.
    pub aggregate: u64,
    /// Elementwise products (gates, Hadamard terms, weighted combines).
    pub elementwise: u64,
}

impl MacCounters {
    pub fn total(&self) -> u64 {
        self.linear + self.aggregate + self.elementwise
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Elu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Tanh {
        x: usize,
    },
    Relu {
        x: usize,
    },
    Ln {
        x: usize,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    MeanList {
        parts: Vec<usize>,
    },
    SumList {
        parts: Vec<usize>,
    },
    Hadamard {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AffineScalar {
        x: usize,
        mul: f64,
    },
    BroadcastRows {
        x: usize,
        rows: usize,
    },
    StackRows {
        parts: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    SliceLast {
        x: usize,
        offset: usize,
        len: usize,
    },
    RowSelect {
        table: usize,
        row: usize,
    },
    Pick {
        x: usize,
        index: usize,
    },
    RowCombine {
        weights: usize,
        matrix: usize,
    },
    Sum {
        x: usize,
    },
}

struct Node {
    tensor: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Ordered record of executed operations plus their values and gradients.
///
/// A tape is built per forward pass and discarded after gradients are
/// harvested; parameters re-enter fresh tapes as leaves.
pub struct Tape {
    nodes: Vec<Node>,
    scope: MacScope,
    macs: [MacCounters; 7],
    backward_done: bool,
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
            scope: MacScope::Other,
            macs: [MacCounters::default(); 7],
            backward_done: false,
        }
    }

    pub fn set_scope(&mut self, scope: MacScope) {
        self.scope = scope;
    }

    pub fn scope(&self) -> MacScope {
        self.scope
    }

    pub fn macs(&self, scope: MacScope) -> MacCounters {
        self.macs[scope.index()]
    }

    pub fn macs_total(&self) -> MacCounters {
        let mut out = MacCounters::default();
        for m in &self.macs {
            out.linear += m.linear;
            out.aggregate += m.aggregate;
            out.elementwise += m.elementwise;
        }
        out
    }

    fn count_linear(&mut self, n: u64) {
        self.macs[self.scope.index()].linear += n;
    }

    fn count_aggregate(&mut self, n: u64) {
        self.macs[self.scope.index()].aggregate += n;
    }

    fn count_elementwise(&mut self, n: u64) {
        self.macs[self.scope.index()].elementwise += n;
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient buffer of a node after [`Tape::backward`]; zeros if the node
    /// was unreachable from the loss.
    pub fn grad(&self, id: TensorId) -> Vec<f64> {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[id.0].tensor.numel()],
        }
    }

    fn push(&mut self, tensor: Tensor, requires_grad: bool, op: Op) -> TensorId {
        debug_assert!(
            tensor.data.iter().all(|v| v.is_finite()),
            "non-finite value on tape"
        );
        let id = self.nodes.len();
        self.nodes.push(Node {
            tensor,
            requires_grad,
            grad: None,
            op,
        });
        TensorId(id)
    }

    fn any_requires(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Record a constant input (no gradient).
    pub fn value(&mut self, t: Tensor) -> TensorId {
        self.push(t, false, Op::Leaf)
    }

    /// Record a differentiable leaf (a parameter).
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(t, true, Op::Leaf)
    }

    // ── forward operations ──────────────────────────────────────────────

    /// `out[.., j] = sum_i x[.., i] * w[i, j] (+ b[j])` over all leading rows.
    pub fn linear(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let (m, n) = (ws[0], ws[1]);
        if let Some(bid) = b {
            let bs = self.shape(bid);
            if bs != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: bs.to_vec(),
                    rhs: vec![n],
                });
            }
        }
        let rows = self.nodes[x.0].tensor.numel() / m;
        let xd = &self.nodes[x.0].tensor.data;
        let wd = &self.nodes[w.0].tensor.data;
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let xrow = &xd[r * m..(r + 1) * m];
            let orow = &mut out[r * n..(r + 1) * n];
            if let Some(bid) = b {
                orow.copy_from_slice(&self.nodes[bid.0].tensor.data);
            }
            for (i, &xi) in xrow.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &wd[i * n..(i + 1) * n];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xi * wv;
                }
            }
        }
        self.count_linear((rows * m * n) as u64);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = n;
        let req = self.any_requires(&[x.0, w.0]) || b.map_or(false, |bid| self.nodes[bid.0].requires_grad);
        Ok(self.push(
            Tensor { shape, data: out },
            req,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
            },
        ))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: TensorId) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let data = t
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
            .collect();
        let shape = t.shape.clone();
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::Elu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let data = t.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = t.shape.clone();
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let data = t.data.iter().map(|&v| v.tanh()).collect();
        let shape = t.shape.clone();
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::Tanh { x: x.0 })
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let data = t.data.iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape.clone();
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::Relu { x: x.0 })
    }

    /// Natural log; caller must keep inputs positive.
    pub fn ln(&mut self, x: TensorId) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let data = t.data.iter().map(|&v| v.ln()).collect();
        let shape = t.shape.clone();
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::Ln { x: x.0 })
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        let t = &self.nodes[x.0].tensor;
        let rank = t.shape.len();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let ax = t.shape[axis];
        let outer: usize = t.shape[..axis].iter().product();
        let inner: usize = t.shape[axis + 1..].iter().product();
        let mut data = vec![0.0; t.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * ax * inner + j * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..ax {
                    mx = mx.max(t.data[at(j)]);
                }
                let mut z = 0.0;
                for j in 0..ax {
                    let e = (t.data[at(j)] - mx).exp();
                    data[at(j)] = e;
                    z += e;
                }
                for j in 0..ax {
                    data[at(j)] /= z;
                }
            }
        }
        let shape = t.shape.clone();
        let req = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor { shape, data }, req, Op::Softmax { x: x.0, axis }))
    }

    /// Concatenate along `axis`; parts must agree on every other extent.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyList);
        }
        let first = self.shape(parts[0]).to_vec();
        let rank = first.len();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != rank
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let s = self.shape(p).to_vec();
            let pd = &self.nodes[p.0].tensor.data;
            let block = s[axis] * inner;
            for o in 0..outer {
                let src = &pd[o * block..(o + 1) * block];
                let dst_start = o * axis_total * inner + offset * inner;
                data[dst_start..dst_start + block].copy_from_slice(src);
            }
            offset += s[axis];
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_requires(&ids);
        Ok(self.push(Tensor { shape, data }, req, Op::Concat { parts: ids, axis }))
    }

    /// Elementwise mean over a non-empty list of same-shaped tensors.
    pub fn mean_list(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyList);
        }
        let shape = self.shape(parts[0]).to_vec();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "mean_list",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let numel: usize = shape.iter().product();
        let inv = 1.0 / parts.len() as f64;
        let mut data = vec![0.0; numel];
        for &p in parts {
            for (d, &v) in data.iter_mut().zip(&self.nodes[p.0].tensor.data) {
                *d += v * inv;
            }
        }
        self.count_aggregate((parts.len() * numel) as u64);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_requires(&ids);
        Ok(self.push(Tensor { shape, data }, req, Op::MeanList { parts: ids }))
    }

    /// Elementwise sum over a non-empty list of same-shaped tensors.
    pub fn sum_list(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyList);
        }
        let shape = self.shape(parts[0]).to_vec();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "sum_list",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        for &p in parts {
            for (d, &v) in data.iter_mut().zip(&self.nodes[p.0].tensor.data) {
                *d += v;
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_requires(&ids);
        Ok(self.push(Tensor { shape, data }, req, Op::SumList { parts: ids }))
    }

    /// Elementwise product. Shapes must be equal rank and equal extent-wise,
    /// except that an extent of 1 broadcasts against the other operand.
    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).ok_or(TensorError::ShapeMismatch {
            op: "hadamard",
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        {
            let ad = &self.nodes[a.0].tensor.data;
            let bd = &self.nodes[b.0].tensor.data;
            for (flat, d) in data.iter_mut().enumerate() {
                let ia = broadcast_index(flat, &out_shape, &sa);
                let ib = broadcast_index(flat, &out_shape, &sb);
                *d = ad[ia] * bd[ib];
            }
        }
        self.count_elementwise(numel as u64);
        let req = self.any_requires(&[a.0, b.0]);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            req,
            Op::Hadamard { a: a.0, b: b.0 },
        ))
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self.nodes[a.0]
            .tensor
            .data
            .iter()
            .zip(&self.nodes[b.0].tensor.data)
            .map(|(x, y)| x + y)
            .collect();
        let req = self.any_requires(&[a.0, b.0]);
        Ok(self.push(
            Tensor { shape: sa, data },
            req,
            Op::Add { a: a.0, b: b.0 },
        ))
    }

    /// `mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let data = t.data.iter().map(|&v| mul * v + add).collect();
        let shape = t.shape.clone();
        self.count_elementwise(t.numel() as u64);
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::AffineScalar { x: x.0, mul })
    }

    /// Repeat `x` as `rows` copies along a new leading axis.
    pub fn broadcast_rows(&mut self, x: TensorId, rows: usize) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let mut shape = Vec::with_capacity(t.shape.len() + 1);
        shape.push(rows);
        shape.extend_from_slice(&t.shape);
        let mut data = Vec::with_capacity(rows * t.numel());
        for _ in 0..rows {
            data.extend_from_slice(&t.data);
        }
        let req = self.nodes[x.0].requires_grad;
        self.push(Tensor { shape, data }, req, Op::BroadcastRows { x: x.0, rows })
    }

    /// Stack same-shaped tensors along a new leading axis.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyList);
        }
        let inner = self.shape(parts[0]).to_vec();
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(TensorError::Ragged);
            }
            data.extend_from_slice(&self.nodes[p.0].tensor.data);
        }
        let mut shape = Vec::with_capacity(inner.len() + 1);
        shape.push(parts.len());
        shape.extend_from_slice(&inner);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_requires(&ids);
        Ok(self.push(Tensor { shape, data }, req, Op::StackRows { parts: ids }))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let t = &self.nodes[x.0].tensor;
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(TensorError::BadConstruction {
                shape,
                len: t.numel(),
            });
        }
        let data = t.data.clone();
        let req = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor { shape, data }, req, Op::Reshape { x: x.0 }))
    }

    /// Slice `[offset, offset+len)` along the last axis.
    pub fn slice_last(
        &mut self,
        x: TensorId,
        offset: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        let t = &self.nodes[x.0].tensor;
        let last = *t.shape.last().ok_or(TensorError::InvalidAxis {
            axis: 0,
            rank: 0,
        })?;
        if offset + len > last {
            return Err(TensorError::IndexOutOfBounds {
                index: offset + len,
                extent: last,
            });
        }
        let rows = t.numel() / last;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * last + offset..r * last + offset + len]);
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = len;
        let req = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Tensor { shape, data },
            req,
            Op::SliceLast {
                x: x.0,
                offset,
                len,
            },
        ))
    }

    /// Select row `row` from a 2-d table (embedding lookup).
    pub fn row_select(&mut self, table: TensorId, row: usize) -> Result<TensorId, TensorError> {
        let t = &self.nodes[table.0].tensor;
        if t.shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "row_select",
                lhs: t.shape.clone(),
                rhs: vec![0, 0],
            });
        }
        let (v, e) = (t.shape[0], t.shape[1]);
        if row >= v {
            return Err(TensorError::IndexOutOfBounds {
                index: row,
                extent: v,
            });
        }
        let data = t.data[row * e..(row + 1) * e].to_vec();
        let req = self.nodes[table.0].requires_grad;
        Ok(self.push(
            Tensor {
                shape: vec![e],
                data,
            },
            req,
            Op::RowSelect {
                table: table.0,
                row,
            },
        ))
    }

    /// Pick a single element by flat index; result has shape `[1]`.
    pub fn pick(&mut self, x: TensorId, index: usize) -> Result<TensorId, TensorError> {
        let t = &self.nodes[x.0].tensor;
        if index >= t.numel() {
            return Err(TensorError::IndexOutOfBounds {
                index,
                extent: t.numel(),
            });
        }
        let data = vec![t.data[index]];
        let req = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Tensor {
                shape: vec![1],
                data,
            },
            req,
            Op::Pick { x: x.0, index },
        ))
    }

    /// `out[j] = sum_h weights[h] * matrix[h, j]` — weighted row combination.
    pub fn row_combine(
        &mut self,
        weights: TensorId,
        matrix: TensorId,
    ) -> Result<TensorId, TensorError> {
        let ws = self.shape(weights).to_vec();
        let ms = self.shape(matrix).to_vec();
        if ws.len() != 1 || ms.len() != 2 || ws[0] != ms[0] {
            return Err(TensorError::ShapeMismatch {
                op: "row_combine",
                lhs: ws,
                rhs: ms,
            });
        }
        let (h, d) = (ms[0], ms[1]);
        let wd = &self.nodes[weights.0].tensor.data;
        let md = &self.nodes[matrix.0].tensor.data;
        let mut data = vec![0.0; d];
        for r in 0..h {
            let coeff = wd[r];
            for (o, &m) in data.iter_mut().zip(&md[r * d..(r + 1) * d]) {
                *o += coeff * m;
            }
        }
        self.count_elementwise((h * d) as u64);
        let req = self.any_requires(&[weights.0, matrix.0]);
        Ok(self.push(
            Tensor {
                shape: vec![d],
                data,
            },
            req,
            Op::RowCombine {
                weights: weights.0,
                matrix: matrix.0,
            },
        ))
    }

    /// Sum of all elements; result has shape `[1]`.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let t = &self.nodes[x.0].tensor;
        let s: f64 = t.data.iter().sum();
        let req = self.nodes[x.0].requires_grad;
        self.push(
            Tensor {
                shape: vec![1],
                data: vec![s],
            },
            req,
            Op::Sum { x: x.0 },
        )
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// node with `requires_grad`; unreachable nodes keep zero gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: ls.to_vec(),
            });
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let grad = match self.nodes[i].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (m, n) = {
                        let ws = &self.nodes[w].tensor.shape;
                        (ws[0], ws[1])
                    };
                    let rows = self.nodes[x].tensor.numel() / m;
                    if self.nodes[x].requires_grad {
                        let wd = self.nodes[w].tensor.data.clone();
                        let mut dx = vec![0.0; rows * m];
                        for r in 0..rows {
                            let grow = &grad[r * n..(r + 1) * n];
                            let xrow = &mut dx[r * m..(r + 1) * m];
                            for (ii, xv) in xrow.iter_mut().enumerate() {
                                let wrow = &wd[ii * n..(ii + 1) * n];
                                let mut acc = 0.0;
                                for (g, &wv) in grow.iter().zip(wrow) {
                                    acc += g * wv;
                                }
                                *xv = acc;
                            }
                        }
                        self.accumulate(x, &dx);
                    }
                    if self.nodes[w].requires_grad {
                        let xd = self.nodes[x].tensor.data.clone();
                        let mut dw = vec![0.0; m * n];
                        for r in 0..rows {
                            let grow = &grad[r * n..(r + 1) * n];
                            let xrow = &xd[r * m..(r + 1) * m];
                            for (ii, &xv) in xrow.iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let wrow = &mut dw[ii * n..(ii + 1) * n];
                                for (o, &g) in wrow.iter_mut().zip(grow) {
                                    *o += xv * g;
                                }
                            }
                        }
                        self.accumulate(w, &dw);
                    }
                    if let Some(bid) = b {
                        if self.nodes[bid].requires_grad {
                            let mut db = vec![0.0; n];
                            for r in 0..rows {
                                for (o, &g) in db.iter_mut().zip(&grad[r * n..(r + 1) * n]) {
                                    *o += g;
                                }
                            }
                            self.accumulate(bid, &db);
                        }
                    }
                }
                Op::Elu { x } => {
                    let dx: Vec<f64> = {
                        let xd = &self.nodes[x].tensor.data;
                        let yd = &self.nodes[i].tensor.data;
                        grad.iter()
                            .zip(xd.iter().zip(yd))
                            .map(|(&g, (&xv, &yv))| if xv > 0.0 { g } else { g * (yv + 1.0) })
                            .collect()
                    };
                    self.accumulate(x, &dx);
                }
                Op::Sigmoid { x } => {
                    let dx: Vec<f64> = {
                        let yd = &self.nodes[i].tensor.data;
                        grad.iter().zip(yd).map(|(&g, &s)| g * s * (1.0 - s)).collect()
                    };
                    self.accumulate(x, &dx);
                }
                Op::Tanh { x } => {
                    let dx: Vec<f64> = {
                        let yd = &self.nodes[i].tensor.data;
                        grad.iter().zip(yd).map(|(&g, &y)| g * (1.0 - y * y)).collect()
                    };
                    self.accumulate(x, &dx);
                }
                Op::Relu { x } => {
                    let dx: Vec<f64> = {
                        let xd = &self.nodes[x].tensor.data;
                        grad.iter()
                            .zip(xd)
                            .map(|(&g, &xv)| if xv > 0.0 { g } else { 0.0 })
                            .collect()
                    };
                    self.accumulate(x, &dx);
                }
                Op::Ln { x } => {
                    let dx: Vec<f64> = {
                        let xd = &self.nodes[x].tensor.data;
                        grad.iter().zip(xd).map(|(&g, &xv)| g / xv).collect()
                    };
                    self.accumulate(x, &dx);
                }
                Op::Softmax { x, axis } => {
                    let dx = {
                        let y = &self.nodes[i].tensor;
                        let ax = y.shape[axis];
                        let outer: usize = y.shape[..axis].iter().product();
                        let inner: usize = y.shape[axis + 1..].iter().product();
                        let mut dx = vec![0.0; y.numel()];
                        for o in 0..outer {
                            for ii in 0..inner {
                                let at = |j: usize| o * ax * inner + j * inner + ii;
                                let mut dot = 0.0;
                                for j in 0..ax {
                                    dot += grad[at(j)] * y.data[at(j)];
                                }
                                for j in 0..ax {
                                    dx[at(j)] = y.data[at(j)] * (grad[at(j)] - dot);
                                }
                            }
                        }
                        dx
                    };
                    self.accumulate(x, &dx);
                }
                Op::Concat { parts, axis } => {
                    let out_shape = self.nodes[i].tensor.shape.clone();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let axis_total = out_shape[axis];
                    let mut offset = 0;
                    for p in parts {
                        let pa = self.nodes[p].tensor.shape[axis];
                        if self.nodes[p].requires_grad {
                            let block = pa * inner;
                            let mut dp = vec![0.0; outer * block];
                            for o in 0..outer {
                                let src_start = o * axis_total * inner + offset * inner;
                                dp[o * block..(o + 1) * block]
                                    .copy_from_slice(&grad[src_start..src_start + block]);
                            }
                            self.accumulate(p, &dp);
                        }
                        offset += pa;
                    }
                }
                Op::MeanList { parts } => {
                    let inv = 1.0 / parts.len() as f64;
                    let dp: Vec<f64> = grad.iter().map(|&g| g * inv).collect();
                    for p in parts {
                        self.accumulate(p, &dp);
                    }
                }
                Op::SumList { parts } => {
                    for p in parts {
                        self.accumulate(p, &grad);
                    }
                }
                Op::Hadamard { a, b } => {
                    let out_shape = self.nodes[i].tensor.shape.clone();
                    let sa = self.nodes[a].tensor.shape.clone();
                    let sb = self.nodes[b].tensor.shape.clone();
                    if self.nodes[a].requires_grad {
                        let bd = &self.nodes[b].tensor.data;
                        let mut da = vec![0.0; self.nodes[a].tensor.numel()];
                        for (flat, &g) in grad.iter().enumerate() {
                            let ia = broadcast_index(flat, &out_shape, &sa);
                            let ib = broadcast_index(flat, &out_shape, &sb);
                            da[ia] += g * bd[ib];
                        }
                        self.accumulate(a, &da);
                    }
                    if self.nodes[b].requires_grad {
                        let ad = &self.nodes[a].tensor.data;
                        let mut db = vec![0.0; self.nodes[b].tensor.numel()];
                        for (flat, &g) in grad.iter().enumerate() {
                            let ia = broadcast_index(flat, &out_shape, &sa);
                            let ib = broadcast_index(flat, &out_shape, &sb);
                            db[ib] += g * ad[ia];
                        }
                        self.accumulate(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::AffineScalar { x, mul } => {
                    let dx: Vec<f64> = grad.iter().map(|&g| g * mul).collect();
                    self.accumulate(x, &dx);
                }
                Op::BroadcastRows { x, rows } => {
                    let numel = self.nodes[x].tensor.numel();
                    let mut dx = vec![0.0; numel];
                    for r in 0..rows {
                        for (o, &g) in dx.iter_mut().zip(&grad[r * numel..(r + 1) * numel]) {
                            *o += g;
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::StackRows { parts } => {
                    let numel = self.nodes[parts[0]].tensor.numel();
                    for (r, p) in parts.into_iter().enumerate() {
                        self.accumulate(p, &grad[r * numel..(r + 1) * numel]);
                    }
                }
                Op::Reshape { x } => {
                    self.accumulate(x, &grad);
                }
                Op::SliceLast { x, offset, len } => {
                    let t_numel = self.nodes[x].tensor.numel();
                    let last = *self.nodes[x].tensor.shape.last().unwrap();
                    let rows = t_numel / last;
                    let mut dx = vec![0.0; t_numel];
                    for r in 0..rows {
                        for j in 0..len {
                            dx[r * last + offset + j] += grad[r * len + j];
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::RowSelect { table, row } => {
                    let e = self.nodes[table].tensor.shape[1];
                    let numel = self.nodes[table].tensor.numel();
                    let mut dt = vec![0.0; numel];
                    dt[row * e..(row + 1) * e].copy_from_slice(&grad);
                    self.accumulate(table, &dt);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.nodes[x].tensor.numel()];
                    dx[index] = grad[0];
                    self.accumulate(x, &dx);
                }
                Op::RowCombine { weights, matrix } => {
                    let (h, d) = {
                        let ms = &self.nodes[matrix].tensor.shape;
                        (ms[0], ms[1])
                    };
                    if self.nodes[weights].requires_grad {
                        let md = &self.nodes[matrix].tensor.data;
                        let mut dw = vec![0.0; h];
                        for (r, o) in dw.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for (g, &m) in grad.iter().zip(&md[r * d..(r + 1) * d]) {
                                acc += g * m;
                            }
                            *o = acc;
                        }
                        self.accumulate(weights, &dw);
                    }
                    if self.nodes[matrix].requires_grad {
                        let wd = self.nodes[weights].tensor.data.clone();
                        let mut dm = vec![0.0; h * d];
                        for r in 0..h {
                            for (o, &g) in dm[r * d..(r + 1) * d].iter_mut().zip(&grad) {
                                *o += wd[r] * g;
                            }
                        }
                        self.accumulate(matrix, &dm);
                    }
                }
                Op::Sum { x } => {
                    let dx = vec![grad[0]; self.nodes[x].tensor.numel()];
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, delta: &[f64]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let numel = self.nodes[id].tensor.numel();
        let g = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (o, &d) in g.iter_mut().zip(delta) {
            *o += d;
        }
    }
}

/// Broadcast result shape for equal-rank shapes with singleton expansion,
/// or `None` when incompatible.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x == y {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else if y == 1 {
                Some(x)
            } else {
                None
            }
        })
        .collect()
}

/// Map a flat index in `out_shape` to the flat index in `shape`, collapsing
/// broadcast (singleton) extents.
fn broadcast_index(flat: usize, out_shape: &[usize], shape: &[usize]) -> usize {
    if out_shape == shape {
        return flat;
    }
    let mut rem = flat;
    let mut idx = 0;
    let mut stride = 1;
    let mut coords = [0usize; 8];
    let rank = out_shape.len();
    for d in (0..rank).rev() {
        coords[d] = rem % out_shape[d];
        rem /= out_shape[d];
    }
    for d in (0..rank).rev() {
        let c = if shape[d] == 1 { 0 } else { coords[d] };
        idx += c * stride;
        stride *= shape[d];
    }
    idx
}
