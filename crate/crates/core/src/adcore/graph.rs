use std::collections::HashMap;
use std::fmt;

use super::rng::RngStream;
use super::store::{Gradients, ParameterStore};
use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use super::AdError;
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Param,
    Input,
    MatMul,
    Add,
    Mul,
    Concat,
    Tanh,
    Sigmoid,
    Softmax,
    Log,
    Gather,
    Dropout,
    Slice,
    Reshape,
    Sum,
    Affine,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Lower clamp applied inside the `log` op.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op<T> {
    Param(usize),
    Input,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Vec<NodeId>, Axis),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    Gather(NodeId, Vec<usize>),
    Dropout(NodeId, Vec<T>),
    Slice(NodeId, usize, usize),
    Reshape(NodeId),
    Sum(NodeId),
    Affine(NodeId, T, T),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Param(_) => OpKind::Param,
            Op::Input => OpKind::Input,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Concat(..) => OpKind::Concat,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Log(_) => OpKind::Log,
            Op::Gather(..) => OpKind::Gather,
            Op::Dropout(..) => OpKind::Dropout,
            Op::Slice(..) => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::Affine(..) => OpKind::Affine,
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    /// `None` only for parameter leaves, whose value lives in the store.
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// Whether stochastic ops are active.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut RngStream),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Define-by-run computation graph over a borrowed parameter store.
///
/// Every op evaluates eagerly when recorded, so node ids are created in
/// topological order and `backward` is a single reverse sweep.
pub struct Graph<'s, T> {
    store: &'s ParameterStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<usize, NodeId>,
    fault: Option<OpKind>,
}

/// Gradients for every node that required one after a backward sweep.
pub struct NodeGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> NodeGrads<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParameterStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            fault: None,
        }
    }

    pub fn store(&self) -> &'s ParameterStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales the backward rule of `kind` by 1.5. Negative control for
    /// gradient checking only.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(pid), _) => &self.store.param(*pid).value,
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    pub fn scalar_value(&self, id: NodeId) -> Option<T> {
        self.value(id).item()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<NodeId, AdError> {
        if !value.all_finite() {
            return Err(AdError::NonFinite {
                op: op.kind(),
                node: self.nodes.len(),
            });
        }
        let requires_grad = match &op {
            Op::Param(_) | Op::Input => unreachable!(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => self.rg(*a) || self.rg(*b),
            Op::Concat(parts, _) => parts.iter().any(|p| self.rg(*p)),
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Gather(a, _)
            | Op::Dropout(a, _)
            | Op::Slice(a, ..)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Affine(a, ..) => self.rg(*a),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(id)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn mismatch(&self, op: OpKind, a: NodeId, b: NodeId) -> AdError {
        AdError::ShapeMismatch {
            op,
            left: a.0,
            left_shape: self.value(a).shape().to_vec(),
            right: b.0,
            right_shape: self.value(b).shape().to_vec(),
        }
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId, AdError> {
        let pid = self
            .store
            .id(name)
            .ok_or_else(|| AdError::UnknownParameter(name.to_string()))?;
        if let Some(&id) = self.params.get(&pid) {
            return Ok(id);
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param(pid),
            value: None,
            requires_grad: !self.store.is_frozen(name),
        });
        self.params.insert(pid, id);
        Ok(id)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            requires_grad: false,
        });
        id
    }

    /// Input whose gradient is tracked (queried through [`NodeGrads`]).
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.constant(value);
        self.nodes[id.0].requires_grad = true;
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch(OpKind::MatMul, a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out))
    }

    /// Elementwise sum; `b` may be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb || (rb != ra && rb != 1) {
            return Err(self.mismatch(OpKind::Add, a, b));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut out = av.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let j = if rb == 1 { i % ca } else { i };
            *o = *o + bv[j];
        }
        let t = Tensor::new(av.shape().to_vec(), out);
        self.push(Op::Add(a, b), t)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch(OpKind::Mul, a, b));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out);
        self.push(Op::Mul(a, b), t)
    }

    /// Concatenation along columns (last axis) or rows.
    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId, AdError> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let (r0, c0) = self.shape(parts[0]);
        let t = match axis {
            Axis::Cols => {
                for &p in &parts[1..] {
                    if self.shape(p).0 != r0 {
                        return Err(self.mismatch(OpKind::Concat, parts[0], p));
                    }
                }
                let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
                let mut out = Vec::with_capacity(r0 * total);
                for r in 0..r0 {
                    for &p in parts {
                        out.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::matrix(r0, total, out)
            }
            Axis::Rows => {
                for &p in &parts[1..] {
                    if self.shape(p).1 != c0 {
                        return Err(self.mismatch(OpKind::Concat, parts[0], p));
                    }
                }
                let mut out = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    out.extend_from_slice(self.value(p).data());
                    rows += self.shape(p).0;
                }
                Tensor::matrix(rows, c0, out)
            }
        };
        self.push(Op::Concat(parts.to_vec(), axis), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let t = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let t = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), t)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let v = self.value(a);
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(v.cols()) {
            softmax_in_place(row);
        }
        let t = Tensor::new(v.shape().to_vec(), out);
        self.push(Op::Softmax(a), t)
    }

    /// Natural log of `max(x, LOG_CLAMP)`.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let eps = T::c(LOG_CLAMP);
        let t = self.value(a).map(|x| x.max(eps).ln());
        self.push(Op::Log(a), t)
    }

    /// Selects rows of a rank-2 value (embedding lookup when `src` is a table).
    pub fn gather(&mut self, src: NodeId, rows: &[usize]) -> Result<NodeId, AdError> {
        assert!(!rows.is_empty(), "gather of zero rows");
        let v = self.value(src);
        let (r, c) = (v.rows(), v.cols());
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(AdError::IndexOutOfRange {
                node: src.0,
                index: bad,
                rows: r,
            });
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(v.row_slice(i));
        }
        self.push(Op::Gather(src, rows.to_vec()), Tensor::matrix(rows.len(), c, out))
    }

    /// Inverted dropout with keep probability `keep`; identity in eval mode
    /// or when `keep >= 1`.
    pub fn dropout(&mut self, a: NodeId, keep: f64, mode: &mut Mode<'_>) -> Result<NodeId, AdError> {
        let rng = match mode {
            Mode::Train(rng) if keep < 1.0 => rng,
            _ => return Ok(a),
        };
        let scale = T::c(1.0 / keep);
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.bernoulli(keep) { scale } else { T::zero() })
            .collect();
        let v = self.value(a);
        let out: Vec<T> = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(v.shape().to_vec(), out);
        self.push(Op::Dropout(a, mask), t)
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, AdError> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        assert!(start < end && end <= c, "column slice {start}..{end} of width {c}");
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&v.row_slice(i)[start..end]);
        }
        self.push(Op::Slice(a, start, end), Tensor::matrix(r, end - start, out))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, AdError> {
        let v = self.value(a);
        if v.len() != rows * cols {
            return Err(AdError::BadReshape {
                node: a.0,
                from: v.shape().to_vec(),
                to: vec![rows, cols],
            });
        }
        let t = v.clone().reshaped(vec![rows, cols]);
        self.push(Op::Reshape(a), t)
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId, AdError> {
        let (s, b) = (T::c(scale), T::c(shift));
        let t = self.value(a).map(|x| s * x + b);
        self.push(Op::Affine(a, s, b), t)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, AdError> {
        self.affine(a, factor, 0.0)
    }

    /// Reverse sweep from `output`; returns gradients for every node that
    /// requires one.
    pub fn backward_nodes(&self, output: NodeId) -> Result<NodeGrads<T>, AdError> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(AdError::NotScalar {
                node: output.0,
                shape: self.value(output).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.rg(output) {
            return Ok(NodeGrads { grads });
        }
        grads[output.0] = Some(Tensor::filled(self.value(output).shape(), T::one()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let g = if self.fault == Some(node.op.kind()) {
                g.map(|x| x * T::c(1.5))
            } else {
                g
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(NodeGrads { grads })
    }

    /// Gradients of a scalar `output` with respect to every unfrozen stored
    /// parameter; untouched parameters receive zero tensors.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>, AdError> {
        let node_grads = self.backward_nodes(output)?;
        let mut out = Gradients::new();
        for p in self.store.iter() {
            if self.store.is_frozen(&p.name) {
                continue;
            }
            let pid = self.store.id(&p.name).unwrap();
            let g = self
                .params
                .get(&pid)
                .and_then(|id| node_grads.get(*id).cloned())
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            out.insert(p.name.clone(), g);
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Param(_) | Op::Input => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.rg(*a) {
                    let da = matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.data().to_vec());
                }
                if self.rg(*b) {
                    let (rb, cb) = self.shape(*b);
                    if rb == g.rows() {
                        self.accumulate(grads, *b, g.data().to_vec());
                    } else {
                        let mut db = vec![T::zero(); cb];
                        for row in g.data().chunks(cb) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d = *d + x;
                            }
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let da = zip_map(g.data(), self.value(*b).data(), |x, y| x * y);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = zip_map(g.data(), self.value(*a).data(), |x, y| x * y);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Concat(parts, Axis::Cols) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::Concat(parts, Axis::Rows) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.data()[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Tanh(a) => {
                let y = out.unwrap().data();
                let d = zip_map(g.data(), y, |gv, yv| gv * (T::one() - yv * yv));
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = out.unwrap().data();
                let d = zip_map(g.data(), y, |gv, yv| gv * yv * (T::one() - yv));
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = out.unwrap();
                let c = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (grow, yrow) in g.data().chunks(c).zip(y.data().chunks(c)) {
                    let dot = grow.iter().zip(yrow).fold(T::zero(), |acc, (&x, &z)| acc + x * z);
                    d.extend(grow.iter().zip(yrow).map(|(&x, &z)| z * (x - dot)));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let eps = T::c(LOG_CLAMP);
                let d = zip_map(g.data(), self.value(*a).data(), |gv, x| {
                    if x > eps {
                        gv / x
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Gather(src, rows) => {
                let c = g.cols();
                let target = grads[src.0].get_or_insert_with(|| {
                    Tensor::zeros(self.value(*src).shape())
                });
                let data = target.data_mut();
                for (k, &r) in rows.iter().enumerate() {
                    let grow = &g.data()[k * c..(k + 1) * c];
                    for (t, &x) in data[r * c..(r + 1) * c].iter_mut().zip(grow) {
                        *t = *t + x;
                    }
                }
            }
            Op::Dropout(a, mask) => {
                let d = zip_map(g.data(), mask, |x, m| x * m);
                self.accumulate(grads, *a, d);
            }
            Op::Slice(a, start, end) => {
                let (r, c) = self.shape(*a);
                let w = end - start;
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    d[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.data().to_vec()),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g.data()[0]; n]);
            }
            Op::Affine(a, s, _) => {
                let s = *s;
                let d = g.data().iter().map(|&x| x * s).collect();
                self.accumulate(grads, *a, d);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, d: Vec<T>) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(t) => {
                for (x, y) in t.data_mut().iter_mut().zip(d) {
                    *x = *x + y;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(self.value(id).shape().to_vec(), d));
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore<f64> {
        ParameterStore::new()
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let s = store();
        let mut g = Graph::new(&s);
        let z = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let p = g.softmax(z).unwrap();
        for &v in g.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let b = g.constant(Tensor::row(vec![11.0, 12.0, 13.0]));
        let pa = g.softmax(a).unwrap();
        let pb = g.softmax(b).unwrap();
        for (x, y) in g.value(pa).data().iter().zip(g.value(pb).data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_points() {
        let s = store();
        let mut g = Graph::new(&s);
        let z = g.constant(Tensor::scalar(0.0));
        let sg = g.sigmoid(z).unwrap();
        let th = g.tanh(z).unwrap();
        assert_eq!(g.scalar_value(sg), Some(0.5));
        assert_eq!(g.scalar_value(th), Some(0.0));
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward_nodes(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(0.25));
    }

    #[test]
    fn matmul_gradient_replicates_vector_per_row() {
        // f(W) = sum(W v): df/dW[i][j] = v[j]
        let mut s = store();
        s.insert("w", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]));
        let mut g = Graph::new(&s);
        let w = g.param("w").unwrap();
        let v = g.constant(Tensor::matrix(3, 1, vec![1.5, -2.0, 0.25]));
        let wv = g.matmul(w, v).unwrap();
        let f = g.sum(wv).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads["w"].data(), &[1.5, -2.0, 0.25, 1.5, -2.0, 0.25]);
    }

    #[test]
    fn shape_mismatch_names_both_nodes() {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        match g.matmul(a, b) {
            Err(AdError::ShapeMismatch { op, left, right, .. }) => {
                assert_eq!(op, OpKind::MatMul);
                assert_eq!((left, right), (a.0, b.0));
            }
            other => panic!("unexpected {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn non_finite_output_names_the_op() {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::scalar(1e300));
        let err = g.affine(a, 1e300, 0.0).unwrap_err();
        assert!(matches!(err, AdError::NonFinite { op: OpKind::Affine, .. }));
    }

    #[test]
    fn backward_requires_scalar_output() {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.variable(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward_nodes(a), Err(AdError::NotScalar { .. })));
    }

    #[test]
    fn untouched_parameters_get_zero_gradients_and_frozen_are_omitted() {
        let mut s = store();
        s.insert("gen.a", Tensor::scalar(2.0));
        s.insert("gen.unused", Tensor::row(vec![1.0, 1.0]));
        s.insert("val.b", Tensor::scalar(3.0));
        s.freeze("val");
        let mut g = Graph::new(&s);
        let a = g.param("gen.a").unwrap();
        let b = g.param("val.b").unwrap();
        let ab = g.mul(a, b).unwrap();
        let grads = g.backward(ab).unwrap();
        assert_eq!(grads["gen.a"].item(), Some(3.0));
        assert_eq!(grads["gen.unused"].data(), &[0.0, 0.0]);
        assert!(!grads.contains_key("val.b"));
    }

    #[test]
    fn gather_scatters_into_embedding_rows() {
        let mut s = store();
        s.insert("emb", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mut g = Graph::new(&s);
        let e = g.param("emb").unwrap();
        let rows = g.gather(e, &[2, 0, 2]).unwrap();
        let f = g.sum(rows).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads["emb"].data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_scales_in_train() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![1.0; 1000]));
        let y = g.dropout(x, 0.5, &mut Mode::Eval).unwrap();
        assert_eq!(x, y);
        let mut rng = RngStream::new(5);
        let z = g.dropout(x, 0.5, &mut Mode::Train(&mut rng)).unwrap();
        let vals = g.value(z).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v == 2.0).count();
        assert!((400..600).contains(&kept));
    }
}
