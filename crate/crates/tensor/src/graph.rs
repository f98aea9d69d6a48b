//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a `1 x 1` loss walks the tape in reverse and
//! returns the gradient of every node that depends on a parameter.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::kernels::{
    attention_backward, attention_forward, gru_cell_backward, gru_cell_forward, layer_norm_backward,
    layer_norm_forward, sigmoid, AttnLayout, AttnProbs, GruCache,
};
use crate::{Csr, ParameterStore, Result, Scalar, Tensor, TensorError};

enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    SliceCols {
        src: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows {
        src: usize,
        idx: Rc<[usize]>,
    },
    Sum(usize),
    RowNorm(usize),
    RowCosine(usize, usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor<S>,
        inv_std: Vec<S>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        layout: Rc<AttnLayout>,
        probs: Rc<Vec<S>>,
    },
    Sparse {
        csr: Rc<Csr<S>>,
        x: usize,
    },
    GruCell {
        gi: usize,
        h: usize,
        w_hh: usize,
        b_hh: usize,
        active: Rc<[bool]>,
        cache: GruCache<S>,
    },
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Computation tape. Single-threaded; drop it to release activations.
pub struct Graph<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    params: RefCell<HashMap<String, usize>>,
    live_bytes: Cell<usize>,
    peak_bytes: Cell<usize>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S: Scalar> {
    graph: &'g Graph<S>,
    id: usize,
}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.graph.nodes.borrow()[self.id].value.shape())
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.get_by_id(var.id)
    }

    pub(crate) fn get_by_id(&self, id: usize) -> Option<&Tensor<S>> {
        self.grads.get(id).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            live_bytes: Cell::new(0),
            peak_bytes: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Peak bytes held by node values, caches and gradients so far.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes.get()
    }

    fn track(&self, added: usize) {
        let live = self.live_bytes.get() + added;
        self.live_bytes.set(live);
        if live > self.peak_bytes.get() {
            self.peak_bytes.set(live);
        }
    }

    fn untrack(&self, removed: usize) {
        self.live_bytes.set(self.live_bytes.get().saturating_sub(removed));
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, needs_grad: bool, extra_bytes: usize) -> Var<'_, S> {
        self.track(value.bytes() + extra_bytes);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn val(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false, 0)
    }

    /// Leaf bound to a named parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParameterStore<S>, name: &str) -> Result<Var<'_, S>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { graph: self, id });
        }
        let p = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let var = self.push(p.value.clone(), Op::Leaf, p.requires_grad, 0);
        self.params.borrow_mut().insert(name.to_string(), var.id);
        Ok(var)
    }

    /// Parameter names bound on this tape with their node ids.
    pub(crate) fn bound_params(&self) -> Vec<(String, usize)> {
        let mut v: Vec<_> = self.params.borrow().iter().map(|(k, &id)| (k.clone(), id)).collect();
        v.sort();
        v
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(&shape, S::one()));
        self.track(S::BYTES);

        let acc = |grads: &mut Vec<Option<Tensor<S>>>, id: usize, g: Tensor<S>| {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    self.track(g.bytes());
                    *slot = Some(g);
                }
            }
        };

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            let v = |i: usize| &nodes[i].value;
            let need = |i: usize| nodes[i].needs_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if need(*a) {
                        acc(&mut grads, *a, g.matmul(&v(*b).transpose())?);
                    }
                    if need(*b) {
                        acc(&mut grads, *b, v(*a).transpose().matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        acc(&mut grads, *a, g.zip_map(v(*b), "mul", |x, y| x * y)?);
                    }
                    if need(*b) {
                        acc(&mut grads, *b, g.zip_map(v(*a), "mul", |x, y| x * y)?);
                    }
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    if need(*b) {
                        let c = g.cols();
                        let mut db = Tensor::zeros(v(*b).shape());
                        for row in g.data().chunks(c) {
                            for (o, &x) in db.data_mut().iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Tanh(a) => {
                    acc(&mut grads, *a, g.zip_map(out, "tanh", |x, y| x * (S::one() - y * y))?);
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads, *a, g.zip_map(out, "sigmoid", |x, y| x * y * (S::one() - y))?);
                }
                Op::Relu(a) => {
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(v(*a), "relu", |x, y| if y > S::zero() { x } else { S::zero() })?,
                    );
                }
                Op::SliceCols { src, start } => {
                    let src_v = v(*src);
                    let (r, c) = (src_v.rows(), src_v.cols());
                    let w = g.cols();
                    let mut d = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        d.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *src, d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = v(p).cols();
                        if need(p) {
                            let r = g.rows();
                            let mut d = Vec::with_capacity(r * w);
                            for i in 0..r {
                                d.extend_from_slice(&g.row(i)[col..col + w]);
                            }
                            acc(&mut grads, p, Tensor::new(&[r, w], d)?);
                        }
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut row = 0;
                    for &p in parts {
                        let r = v(p).rows();
                        if need(p) {
                            let d = g.data()[row * c..(row + r) * c].to_vec();
                            acc(&mut grads, p, Tensor::new(v(p).shape(), d)?);
                        }
                        row += r;
                    }
                }
                Op::GatherRows { src, idx } => {
                    let src_v = v(*src);
                    let c = src_v.cols();
                    let mut d = Tensor::zeros(src_v.shape());
                    for (k, &i) in idx.iter().enumerate() {
                        let dst = &mut d.data_mut()[i * c..(i + 1) * c];
                        for (o, &x) in dst.iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *src, d);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    acc(&mut grads, *a, Tensor::full(v(*a).shape(), gv));
                }
                Op::RowNorm(a) => {
                    let x = v(*a);
                    let mut d = Tensor::zeros(x.shape());
                    for i in 0..x.rows() {
                        let norm = out.data()[i];
                        if norm > S::zero() {
                            let s = g.data()[i] / norm;
                            for (o, &xv) in d.row_mut(i).iter_mut().zip(x.row(i)) {
                                *o = s * xv;
                            }
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::RowCosine(a, b) => {
                    let (av, bv) = (v(*a), v(*b));
                    let mut da = Tensor::zeros(av.shape());
                    let mut db = Tensor::zeros(bv.shape());
                    for i in 0..av.rows() {
                        let (ar, br) = (av.row(i), bv.row(i));
                        let na = ar.iter().map(|&x| x * x).sum::<S>().sqrt();
                        let nb = br.iter().map(|&x| x * x).sum::<S>().sqrt();
                        if na == S::zero() || nb == S::zero() {
                            continue;
                        }
                        let cos = out.data()[i];
                        let gi = g.data()[i];
                        let inv = S::one() / (na * nb);
                        for j in 0..ar.len() {
                            da.row_mut(i)[j] = gi * (br[j] * inv - cos * ar[j] / (na * na));
                            db.row_mut(i)[j] = gi * (ar[j] * inv - cos * br[j] / (nb * nb));
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (dx, dg, db) = layer_norm_backward(&g, xhat, inv_std, v(*gain));
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dg);
                    acc(&mut grads, *bias, db);
                }
                Op::Attention {
                    q,
                    k,
                    v: vv,
                    layout,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(v(*q), v(*k), v(*vv), probs, &g, layout);
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *vv, dv);
                }
                Op::Sparse { csr, x } => acc(&mut grads, *x, csr.t_matmul(&g)),
                Op::GruCell {
                    gi,
                    h,
                    w_hh,
                    b_hh,
                    active,
                    cache,
                } => {
                    let (dgi, dh, dw, db) = gru_cell_backward(&g, v(*h), v(*w_hh), active, cache);
                    acc(&mut grads, *gi, dgi);
                    acc(&mut grads, *h, dh);
                    acc(&mut grads, *w_hh, dw);
                    acc(&mut grads, *b_hh, db);
                }
            }
            // Keep gradients of leaves; intermediate ones are no longer needed.
            self.untrack(g.bytes());
        }
        Ok(Gradients { grads })
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.graph.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(&self, value: Tensor<S>, op: Op<S>) -> Var<'g, S> {
        self.graph.push(value, op, self.graph.needs(self.id), 0)
    }

    fn binary(&self, other: Var<'g, S>, value: Tensor<S>, op: Op<S>) -> Var<'g, S> {
        let needs = self.graph.needs(self.id) || self.graph.needs(other.id);
        self.graph.push(value, op, needs, 0)
    }

    pub fn matmul(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let value = self.value().matmul(&other.value())?;
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    pub fn add(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let value = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, value, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let value = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.binary(other, value, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let value = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, value, Op::Mul(self.id, other.id)))
    }

    /// Adds a `1 x q` row to every row.
    pub fn add_row(&self, bias: Var<'g, S>) -> Result<Var<'g, S>> {
        let (x, b) = (self.value(), bias.value());
        if b.len() != x.cols() {
            return Err(mismatch("add_row", &x, &b));
        }
        let mut value = (*x).clone();
        let c = x.cols();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        Ok(self.binary(bias, value, Op::AddRow(self.id, bias.id)))
    }

    pub fn scale(&self, s: S) -> Var<'g, S> {
        let value = self.value().map(|x| x * s);
        self.unary(value, Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: S) -> Var<'g, S> {
        let value = self.value().map(|x| x + s);
        self.unary(value, Op::AddScalar(self.id))
    }

    pub fn tanh(&self) -> Var<'g, S> {
        let value = self.value().map(S::tanh);
        self.unary(value, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g, S> {
        let value = self.value().map(sigmoid);
        self.unary(value, Op::Sigmoid(self.id))
    }

    pub fn relu(&self) -> Var<'g, S> {
        let value = self.value().map(|x| x.max(S::zero()));
        self.unary(value, Op::Relu(self.id))
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'g, S>> {
        let x = self.value();
        if start + width > x.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: x.shape().to_vec(),
                right: vec![start, width],
            });
        }
        let mut data = Vec::with_capacity(x.rows() * width);
        for i in 0..x.rows() {
            data.extend_from_slice(&x.row(i)[start..start + width]);
        }
        let value = Tensor::new(&[x.rows(), width], data)?;
        Ok(self.unary(value, Op::SliceCols { src: self.id, start }))
    }

    pub fn gather_rows(&self, idx: Rc<[usize]>) -> Result<Var<'g, S>> {
        let value = self.value().gather_rows(&idx)?;
        Ok(self.unary(value, Op::GatherRows { src: self.id, idx }))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&self) -> Var<'g, S> {
        let total = self.value().data().iter().copied().sum::<S>();
        self.unary(Tensor::scalar(total), Op::Sum(self.id))
    }

    /// Euclidean norm of each row, `n x 1`. Zero rows get zero gradient.
    pub fn row_norm(&self) -> Var<'g, S> {
        let x = self.value();
        let data = (0..x.rows())
            .map(|i| x.row(i).iter().map(|&v| v * v).sum::<S>().sqrt())
            .collect();
        let value = Tensor::new(&[x.rows(), 1], data).expect("column");
        self.unary(value, Op::RowNorm(self.id))
    }

    /// Row-wise cosine similarity, `n x 1`. Defined as 0 when either row is zero.
    pub fn row_cosine(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch("row_cosine", &a, &b));
        }
        let data = (0..a.rows()).map(|i| cosine(a.row(i), b.row(i))).collect();
        let value = Tensor::new(&[a.rows(), 1], data)?;
        Ok(self.binary(other, value, Op::RowCosine(self.id, other.id)))
    }

    /// Per-row layer normalisation with learned gain and bias (`1 x c` each).
    pub fn layer_norm(&self, gain: Var<'g, S>, bias: Var<'g, S>) -> Result<Var<'g, S>> {
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        if gv.len() != x.cols() || bv.len() != x.cols() {
            return Err(mismatch("layer_norm", &x, &gv));
        }
        let (y, xhat, inv_std) = layer_norm_forward(&x, &gv, &bv);
        let g = self.graph;
        let needs = g.needs(self.id) || g.needs(gain.id) || g.needs(bias.id);
        let extra = xhat.bytes() + inv_std.len() * S::BYTES;
        Ok(g.push(
            y,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            needs,
            extra,
        ))
    }
}

pub(crate) fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = a.iter().map(|&x| x * x).sum::<S>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<S>().sqrt();
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    a.iter().zip(b).map(|(&x, &y)| x * y).sum::<S>() / (na * nb)
}

pub fn concat_cols<'g, S: Scalar>(parts: &[Var<'g, S>]) -> Result<Var<'g, S>> {
    let g = parts.first().expect("concat of nothing").graph;
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let rows = values[0].rows();
    if let Some(bad) = values.iter().find(|v| v.rows() != rows) {
        return Err(mismatch("concat_cols", &values[0], bad));
    }
    let width: usize = values.iter().map(|v| v.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        for v in &values {
            data.extend_from_slice(v.row(i));
        }
    }
    let needs = parts.iter().any(|p| g.needs(p.id));
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(g.push(Tensor::new(&[rows, width], data)?, Op::ConcatCols(ids), needs, 0))
}

pub fn concat_rows<'g, S: Scalar>(parts: &[Var<'g, S>]) -> Result<Var<'g, S>> {
    let g = parts.first().expect("concat of nothing").graph;
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let cols = values[0].cols();
    if let Some(bad) = values.iter().find(|v| v.cols() != cols) {
        return Err(mismatch("concat_rows", &values[0], bad));
    }
    let rows: usize = values.iter().map(|v| v.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for v in &values {
        data.extend_from_slice(v.data());
    }
    let needs = parts.iter().any(|p| g.needs(p.id));
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(g.push(Tensor::new(&[rows, cols], data)?, Op::ConcatRows(ids), needs, 0))
}

/// Segmented multi-head scaled dot-product attention on projected Q, K, V.
pub fn attention<'g, S: Scalar>(
    q: Var<'g, S>,
    k: Var<'g, S>,
    v: Var<'g, S>,
    layout: Rc<AttnLayout>,
) -> Result<Var<'g, S>> {
    let g = q.graph;
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    if qv.shape() != kv.shape() || qv.shape() != vv.shape() {
        return Err(mismatch("attention", &qv, &kv));
    }
    if qv.cols() % layout.heads() != 0 {
        return Err(TensorError::HeadMismatch {
            dim: qv.cols(),
            heads: layout.heads(),
        });
    }
    if layout.rows() != qv.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "attention layout",
            left: qv.shape().to_vec(),
            right: vec![layout.rows()],
        });
    }
    let (out, probs) = attention_forward(&qv, &kv, &vv, &layout);
    let needs = g.needs(q.id) || g.needs(k.id) || g.needs(v.id);
    let extra = probs.len() * S::BYTES;
    Ok(g.push(
        out,
        Op::Attention {
            q: q.id,
            k: k.id,
            v: v.id,
            layout,
            probs: Rc::new(probs),
        },
        needs,
        extra,
    ))
}

/// Attention probabilities recorded by an [`attention`] node.
pub fn attention_probs<S: Scalar>(var: Var<'_, S>) -> Option<AttnProbs<S>> {
    let nodes = var.graph.nodes.borrow();
    match &nodes[var.id].op {
        Op::Attention { layout, probs, .. } => Some(AttnProbs::from_parts((**layout).clone(), (**probs).clone())),
        _ => None,
    }
}

/// `csr * x`; the sparse matrix is a constant.
pub fn sparse_matmul<'g, S: Scalar>(csr: Rc<Csr<S>>, x: Var<'g, S>) -> Result<Var<'g, S>> {
    let xv = x.value();
    if csr.cols() != xv.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "sparse_matmul",
            left: vec![csr.rows(), csr.cols()],
            right: xv.shape().to_vec(),
        });
    }
    let value = csr.matmul(&xv);
    Ok(x.unary(value, Op::Sparse { csr, x: x.id }))
}

/// One batched GRU step; see the GRU layer for the gate layout.
pub fn gru_cell<'g, S: Scalar>(
    gi: Var<'g, S>,
    h: Var<'g, S>,
    w_hh: Var<'g, S>,
    b_hh: Var<'g, S>,
    active: Rc<[bool]>,
) -> Result<Var<'g, S>> {
    let g = gi.graph;
    let (giv, hv, wv, bv) = (gi.value(), h.value(), w_hh.value(), b_hh.value());
    let hd = hv.cols();
    if giv.cols() != 3 * hd || giv.rows() != hv.rows() || wv.shape() != [hd, 3 * hd] || bv.len() != 3 * hd {
        return Err(mismatch("gru_cell", &giv, &wv));
    }
    if active.len() != hv.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "gru_cell mask",
            left: hv.shape().to_vec(),
            right: vec![active.len()],
        });
    }
    let (out, cache) = gru_cell_forward(&giv, &hv, &wv, &bv, &active);
    let needs = [gi.id, h.id, w_hh.id, b_hh.id].iter().any(|&i| g.needs(i));
    let extra = 4 * cache.r.len() * S::BYTES;
    Ok(g.push(
        out,
        Op::GruCell {
            gi: gi.id,
            h: h.id,
            w_hh: w_hh.id,
            b_hh: b_hh.id,
            active,
            cache,
        },
        needs,
        extra,
    ))
}
