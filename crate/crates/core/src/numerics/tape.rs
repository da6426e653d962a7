//! Reverse-mode differentiation over a linear record of primitive applications.
//!
//! Nodes are appended in evaluation order, so the record is already a
//! topological order; `backward` walks it once in reverse.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Sum(usize),
    MeanAxis { x: usize, axis: usize },
    Row { x: usize, index: usize },
    StackRows(Vec<usize>),
    Reshape(usize),
    SpatialAggregate { x: usize, adj: Rc<Tensor> },
    ChannelMix { x: usize, w: usize },
    TemporalConv { x: usize, w: usize, stride: usize },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    GlobalAvgPool { x: usize, persons: usize },
    BceWithLogits { logits: usize, labels: Rc<Vec<usize>> },
    SoftmaxCe { logits: usize, labels: Rc<Vec<usize>> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive applications for one forward pass.
///
/// A tape is confined to a single thread; tensors moved in and out of it are
/// plain values.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` does not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        self.get_id(v.id)
    }

    pub fn get_id(&self, id: usize) -> Tensor {
        let shape = &self.shapes[id];
        match &self.grads[id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reached(&self, v: Var<'_>) -> bool {
        self.grads[v.id].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an input. It receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        let needs = t.requires_grad();
        self.push_raw(t, Op::Leaf, needs)
    }

    /// Register a value that never receives gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&self, t: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, t: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let needs = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].needs_grad)
        };
        self.push_raw(t, op, needs)
    }

    fn val(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Gradient of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Nodes that do not need grad keep `None`.
        for (id, node) in nodes.iter().enumerate() {
            if !node.needs_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: Vec<f64>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let v = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, p) = dims2(v(*a));
            let n = v(*b).shape()[1];
            // dA = G · Bᵀ, dB = Aᵀ · G
            if nodes[*a].needs_grad {
                let bt = v(*b).transpose().expect("rank 2");
                accumulate(grads, nodes, *a, matmul_raw(g, bt.data(), m, n, p));
            }
            if nodes[*b].needs_grad {
                let at = v(*a).transpose().expect("rank 2");
                accumulate(grads, nodes, *b, matmul_raw(at.data(), g, p, m, n));
            }
        }
        Op::Transpose(a) => {
            let (m, n) = dims2(out);
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    d[j * m + i] = g[i * n + j];
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|x| -x).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (v(*a).data(), v(*b).data());
            accumulate(grads, nodes, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            accumulate(grads, nodes, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
        }
        Op::AddRow(a, r) => {
            let n = v(*r).len();
            accumulate(grads, nodes, *a, g.to_vec());
            let mut dr = vec![0.0; n];
            for chunk in g.chunks(n) {
                for (d, x) in dr.iter_mut().zip(chunk) {
                    *d += x;
                }
            }
            accumulate(grads, nodes, *r, dr);
        }
        Op::MulRow(a, r) => {
            let rv = v(*r).data();
            let av = v(*a).data();
            let n = rv.len();
            let da = g
                .chunks(n)
                .flat_map(|chunk| chunk.iter().zip(rv).map(|(g, r)| g * r))
                .collect();
            accumulate(grads, nodes, *a, da);
            let mut dr = vec![0.0; n];
            for (gc, ac) in g.chunks(n).zip(av.chunks(n)) {
                for j in 0..n {
                    dr[j] += gc[j] * ac[j];
                }
            }
            accumulate(grads, nodes, *r, dr);
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.iter().map(|x| x * c).collect()),
        Op::Relu(a) => {
            let d = g
                .iter()
                .zip(out.data())
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Sigmoid(a) => {
            let d = g
                .iter()
                .zip(out.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::SoftmaxRows(a) => {
            let (m, n) = dims2(out);
            let y = out.data();
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                let row = i * n..(i + 1) * n;
                let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(g, y)| g * y).sum();
                for j in row {
                    d[j] = y[j] * (g[j] - dot);
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, vec![g[0]; v(*a).len()]),
        Op::MeanAxis { x, axis } => {
            let shape = v(*x).shape();
            let (outer, extent, inner) = split_axis(shape, *axis);
            let mut d = vec![0.0; v(*x).len()];
            for o in 0..outer {
                for k in 0..extent {
                    for i in 0..inner {
                        d[(o * extent + k) * inner + i] = g[o * inner + i] / extent as f64;
                    }
                }
            }
            accumulate(grads, nodes, *x, d);
        }
        Op::Row { x, index } => {
            let (_, n) = dims2(v(*x));
            let mut d = vec![0.0; v(*x).len()];
            d[index * n..(index + 1) * n].copy_from_slice(g);
            accumulate(grads, nodes, *x, d);
        }
        Op::StackRows(rows) => {
            let n = out.shape()[1];
            for (i, r) in rows.iter().enumerate() {
                accumulate(grads, nodes, *r, g[i * n..(i + 1) * n].to_vec());
            }
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::SpatialAggregate { x, adj } => {
            let [nb, c, t, vv] = dims4(out);
            let a = adj.data();
            let mut d = vec![0.0; g.len()];
            for slab in 0..nb * c * t {
                let base = slab * vv;
                for w in 0..vv {
                    let gw = g[base + w];
                    for u in 0..vv {
                        d[base + u] += a[w * vv + u] * gw;
                    }
                }
            }
            accumulate(grads, nodes, *x, d);
        }
        Op::ChannelMix { x, w } => {
            let xs = v(*x);
            let [nb, cin, t, vv] = dims4(xs);
            let cout = out.shape()[1];
            let wv = v(*w).data();
            let xd = xs.data();
            let tv = t * vv;
            if nodes[*x].needs_grad {
                let mut dx = vec![0.0; xs.len()];
                for n in 0..nb {
                    for c in 0..cin {
                        let dxs = &mut dx[(n * cin + c) * tv..(n * cin + c + 1) * tv];
                        for o in 0..cout {
                            let wco = wv[c * cout + o];
                            let gs = &g[(n * cout + o) * tv..(n * cout + o + 1) * tv];
                            for (d, gg) in dxs.iter_mut().zip(gs) {
                                *d += wco * gg;
                            }
                        }
                    }
                }
                accumulate(grads, nodes, *x, dx);
            }
            if nodes[*w].needs_grad {
                let mut dw = vec![0.0; cin * cout];
                for n in 0..nb {
                    for c in 0..cin {
                        let xs = &xd[(n * cin + c) * tv..(n * cin + c + 1) * tv];
                        for o in 0..cout {
                            let gs = &g[(n * cout + o) * tv..(n * cout + o + 1) * tv];
                            let dot: f64 = xs.iter().zip(gs).map(|(a, b)| a * b).sum();
                            dw[c * cout + o] += dot;
                        }
                    }
                }
                accumulate(grads, nodes, *w, dw);
            }
        }
        Op::TemporalConv { x, w, stride } => {
            let xs = v(*x);
            let [nb, c, t, vv] = dims4(xs);
            let tout = out.shape()[2];
            let k = v(*w).shape()[1];
            let pad = (k - 1) / 2;
            let wv = v(*w).data();
            let xd = xs.data();
            let mut dx = vec![0.0; xs.len()];
            let mut dw = vec![0.0; c * k];
            for n in 0..nb {
                for ch in 0..c {
                    for to in 0..tout {
                        for kk in 0..k {
                            let ti = (to * stride + kk) as isize - pad as isize;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            let ti = ti as usize;
                            let wk = wv[ch * k + kk];
                            let xo = ((n * c + ch) * t + ti) * vv;
                            let go = ((n * c + ch) * tout + to) * vv;
                            let mut acc = 0.0;
                            for j in 0..vv {
                                dx[xo + j] += wk * g[go + j];
                                acc += xd[xo + j] * g[go + j];
                            }
                            dw[ch * k + kk] += acc;
                        }
                    }
                }
            }
            accumulate(grads, nodes, *x, dx);
            accumulate(grads, nodes, *w, dw);
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let [nb, c, t, vv] = dims4(v(*x));
            let gm = v(*gamma).data();
            let feats = c * vv;
            let m = (nb * t) as f64;
            let mut dgamma = vec![0.0; feats];
            let mut dbeta = vec![0.0; feats];
            for n in 0..nb {
                for ch in 0..c {
                    for ti in 0..t {
                        for j in 0..vv {
                            let idx = ((n * c + ch) * t + ti) * vv + j;
                            let f = ch * vv + j;
                            dgamma[f] += g[idx] * xhat[idx];
                            dbeta[f] += g[idx];
                        }
                    }
                }
            }
            if nodes[*x].needs_grad {
                let mut dx = vec![0.0; g.len()];
                for n in 0..nb {
                    for ch in 0..c {
                        for ti in 0..t {
                            for j in 0..vv {
                                let idx = ((n * c + ch) * t + ti) * vv + j;
                                let f = ch * vv + j;
                                let dxhat = g[idx] * gm[f];
                                dx[idx] = if *batch_stats {
                                    // dgamma[f] = Σ g·xhat, dbeta[f] = Σ g
                                    inv_std[f] / m
                                        * (m * dxhat
                                            - gm[f] * dbeta[f]
                                            - xhat[idx] * gm[f] * dgamma[f])
                                } else {
                                    dxhat * inv_std[f]
                                };
                            }
                        }
                    }
                }
                accumulate(grads, nodes, *x, dx);
            }
            accumulate(grads, nodes, *gamma, dgamma);
            accumulate(grads, nodes, *beta, dbeta);
        }
        Op::GlobalAvgPool { x, persons } => {
            let [nb, c, t, vv] = dims4(v(*x));
            let denom = (persons * t * vv) as f64;
            let mut d = vec![0.0; v(*x).len()];
            for n in 0..nb {
                let b = n / persons;
                for ch in 0..c {
                    let gv = g[b * c + ch] / denom;
                    let base = (n * c + ch) * t * vv;
                    for e in &mut d[base..base + t * vv] {
                        *e = gv;
                    }
                }
            }
            accumulate(grads, nodes, *x, d);
        }
        Op::BceWithLogits { logits, labels } => {
            let (b, n) = dims2(v(*logits));
            let z = v(*logits).data();
            let mut d = vec![0.0; b * n];
            for i in 0..b {
                for j in 0..n {
                    let y = if labels[i] == j { 1.0 } else { 0.0 };
                    d[i * n + j] = g[0] * (sigmoid(z[i * n + j]) - y) / b as f64;
                }
            }
            accumulate(grads, nodes, *logits, d);
        }
        Op::SoftmaxCe { logits, labels } => {
            let (b, n) = dims2(v(*logits));
            let p = softmax_rows_raw(v(*logits).data(), b, n);
            let mut d = vec![0.0; b * n];
            for i in 0..b {
                for j in 0..n {
                    let y = if labels[i] == j { 1.0 } else { 0.0 };
                    d[i * n + j] = g[0] * (p[i * n + j] - y) / b as f64;
                }
            }
            accumulate(grads, nodes, *logits, d);
        }
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    t.dims2().expect("rank-2 tensor")
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// where f64 would otherwise round to 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Row softmax with row-max subtraction.
pub fn softmax_rows_raw(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..n {
            let e = (row[j] - mx).exp();
            out[i * n + j] = e;
            z += e;
        }
        for j in 0..n {
            out[i * n + j] /= z;
        }
    }
    out
}

fn expect_rank4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    if t.rank() != 4 {
        return Err(Error::dim(op, format!("expected rank 4, got {:?}", t.shape())));
    }
    Ok(dims4(t))
}

fn check_labels(op: &'static str, labels: &[usize], b: usize, n: usize) -> Result<()> {
    if labels.len() != b {
        return Err(Error::dim(op, format!("{} labels for batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::dim(op, format!("label {bad} out of range for {n} classes")));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    /// Same value, cut off from the gradient path.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value().as_ref().clone())
    }

    fn same_shape(&self, op: &'static str, other: &Var<'t>) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
            ));
        }
        Ok((a, b))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let c = self.value().matmul(&other.value())?;
        Ok(self.tape.push(c, Op::Matmul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn t(&self) -> Result<Var<'t>> {
        let c = self.value().transpose()?;
        Ok(self.tape.push(c, Op::Transpose(self.id), &[self.id]))
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Var<'t>,
        rec: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(op, other)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        let c = Tensor::new(a.shape(), data)?;
        Ok(self.tape.push(c, rec, &[self.id, other.id]))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with("add", other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with("sub", other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with("mul", other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    fn row_operand(&self, op: &'static str, row: &Var<'t>) -> Result<(Rc<Tensor>, Rc<Tensor>, usize)> {
        let (a, r) = (self.value(), row.value());
        let (_, n) = a.dims2()?;
        let ok = match r.shape() {
            [k] => *k == n,
            [1, k] => *k == n,
            _ => false,
        };
        if !ok {
            return Err(Error::dim(
                op,
                format!("row operand {:?} does not broadcast over {:?}", r.shape(), a.shape()),
            ));
        }
        Ok((a, r, n))
    }

    /// `a[i][j] + row[j]`.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let (a, r, n) = self.row_operand("add_row", row)?;
        let data = a
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(r.data()).map(|(x, y)| x + y))
            .collect();
        let c = Tensor::new(a.shape(), data)?;
        Ok(self.tape.push(c, Op::AddRow(self.id, row.id), &[self.id, row.id]))
    }

    /// Broadcast multiplication by a row: `a[i][j] * row[j]`, i.e. column `j`
    /// of `a` scaled by `row[j]`.
    pub fn mul_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let (a, r, n) = self.row_operand("mul_row", row)?;
        let data = a
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(r.data()).map(|(x, y)| x * y))
            .collect();
        let c = Tensor::new(a.shape(), data)?;
        Ok(self.tape.push(c, Op::MulRow(self.id, row.id), &[self.id, row.id]))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.tape.push(v, Op::Scale(self.id, c), &[self.id])
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.tape.push(v, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.tape.push(v, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = x.dims2()?;
        let c = Tensor::new(&[m, n], softmax_rows_raw(x.data(), m, n))?;
        Ok(self.tape.push(c, Op::SoftmaxRows(self.id), &[self.id]))
    }

    /// Row softmax restricted to columns where `keep[j]` is true; the other
    /// columns are exactly zero and the kept ones renormalize among
    /// themselves.
    pub fn softmax_rows_masked(&self, keep: &[bool]) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = x.dims2()?;
        if keep.len() != n || !keep.iter().any(|&k| k) {
            return Err(Error::dim(
                "softmax_rows_masked",
                format!("mask {keep:?} for {n} columns"),
            ));
        }
        let kept: Vec<usize> = (0..n).filter(|&j| keep[j]).collect();
        let mut sub = Vec::with_capacity(m * kept.len());
        for i in 0..m {
            sub.extend(kept.iter().map(|&j| x.data()[i * n + j]));
        }
        let p = softmax_rows_raw(&sub, m, kept.len());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for (s, &j) in kept.iter().enumerate() {
                out[i * n + j] = p[i * kept.len() + s];
            }
        }
        let c = Tensor::new(&[m, n], out)?;
        Ok(self.tape.push(c, Op::SoftmaxRows(self.id), &[self.id]))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = Tensor::scalar(self.value().sum());
        self.tape.push(s, Op::Sum(self.id), &[self.id])
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::dim("mean_axis", format!("axis {axis} for shape {:?}", x.shape())));
        }
        let (outer, extent, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut s = 0.0;
                for k in 0..extent {
                    s += xd[(o * extent + k) * inner + i];
                }
                out[o * inner + i] = s / extent as f64;
            }
        }
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let c = Tensor::new(&shape, out)?;
        Ok(self.tape.push(c, Op::MeanAxis { x: self.id, axis }, &[self.id]))
    }

    /// Row `index` of a rank-2 node, as a `1×n` node.
    pub fn row(&self, index: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = x.dims2()?;
        if index >= m {
            return Err(Error::dim("row", format!("row {index} of {m}")));
        }
        let c = Tensor::new(&[1, n], x.row(index).to_vec())?;
        Ok(self.tape.push(c, Op::Row { x: self.id, index }, &[self.id]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let c = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.tape.push(c, Op::Reshape(self.id), &[self.id]))
    }

    /// Per-frame spatial aggregation `y[.., w] = Σ_v adj[w][v] · x[.., v]` over
    /// the last axis of an `[N, C, T, V]` node. The adjacency is constant.
    pub fn spatial_aggregate(&self, adj: Rc<Tensor>) -> Result<Var<'t>> {
        let x = self.value();
        let [_, _, _, vv] = expect_rank4("spatial_aggregate", &x)?;
        if adj.shape() != [vv, vv] {
            return Err(Error::dim(
                "spatial_aggregate",
                format!("adjacency {:?} for {vv} points", adj.shape()),
            ));
        }
        let a = adj.data();
        let xd = x.data();
        let mut out = vec![0.0; x.len()];
        for (o, xs) in out.chunks_mut(vv).zip(xd.chunks(vv)) {
            for w in 0..vv {
                let mut s = 0.0;
                for u in 0..vv {
                    s += a[w * vv + u] * xs[u];
                }
                o[w] = s;
            }
        }
        let c = Tensor::new(x.shape(), out)?;
        Ok(self.tape.push(c, Op::SpatialAggregate { x: self.id, adj }, &[self.id]))
    }

    /// Channel mixing `y[n,o,t,v] = Σ_c x[n,c,t,v] · w[c][o]`.
    pub fn channel_mix(&self, w: &Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let [nb, cin, t, vv] = expect_rank4("channel_mix", &x)?;
        let wt = w.value();
        let (wc, cout) = wt.dims2()?;
        if wc != cin {
            return Err(Error::dim(
                "channel_mix",
                format!("{cin} input channels, weight {:?}", wt.shape()),
            ));
        }
        let tv = t * vv;
        let xd = x.data();
        let wd = wt.data();
        let mut out = vec![0.0; nb * cout * tv];
        for n in 0..nb {
            for o in 0..cout {
                let os = &mut out[(n * cout + o) * tv..(n * cout + o + 1) * tv];
                for c in 0..cin {
                    let wco = wd[c * cout + o];
                    let xs = &xd[(n * cin + c) * tv..(n * cin + c + 1) * tv];
                    for (y, xv) in os.iter_mut().zip(xs) {
                        *y += wco * xv;
                    }
                }
            }
        }
        let c = Tensor::new(&[nb, cout, t, vv], out)?;
        Ok(self.tape.push(c, Op::ChannelMix { x: self.id, w: w.id }, &[self.id, w.id]))
    }

    /// Same-padded depthwise temporal convolution with kernel `w: [C, K]`.
    /// Output length is `ceil(T / stride)`.
    pub fn temporal_conv(&self, w: &Var<'t>, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [nb, c, t, vv] = expect_rank4("temporal_conv", &x)?;
        let wt = w.value();
        let (wc, k) = wt.dims2()?;
        if wc != c {
            return Err(Error::dim(
                "temporal_conv",
                format!("{c} channels, kernel {:?}", wt.shape()),
            ));
        }
        if k % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel size {k} must be odd")));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("temporal stride {stride} not in {{1, 2}}")));
        }
        let pad = (k - 1) / 2;
        let tout = t.div_ceil(stride);
        let xd = x.data();
        let wd = wt.data();
        let mut out = vec![0.0; nb * c * tout * vv];
        for n in 0..nb {
            for ch in 0..c {
                for to in 0..tout {
                    let oo = ((n * c + ch) * tout + to) * vv;
                    for kk in 0..k {
                        let ti = (to * stride + kk) as isize - pad as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        let xo = ((n * c + ch) * t + ti as usize) * vv;
                        let wk = wd[ch * k + kk];
                        for j in 0..vv {
                            out[oo + j] += wk * xd[xo + j];
                        }
                    }
                }
            }
        }
        let cten = Tensor::new(&[nb, c, tout, vv], out)?;
        Ok(self.tape.push(
            cten,
            Op::TemporalConv {
                x: self.id,
                w: w.id,
                stride,
            },
            &[self.id, w.id],
        ))
    }

    /// Batch normalization over `(channel, point)` features of an
    /// `[N, C, T, V]` node, with statistics over `(N, T)`.
    ///
    /// With `fixed = None` batch statistics are used and returned as
    /// `(mean, var)` so the caller can update running averages.
    pub fn batch_norm(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        fixed: Option<(&[f64], &[f64])>,
    ) -> Result<(Var<'t>, Option<(Vec<f64>, Vec<f64>)>)> {
        let x = self.value();
        let [nb, c, t, vv] = expect_rank4("batch_norm", &x)?;
        let feats = c * vv;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.len() != feats || bv.len() != feats {
            return Err(Error::dim(
                "batch_norm",
                format!("{feats} features, affine {:?}/{:?}", gv.shape(), bv.shape()),
            ));
        }
        let xd = x.data();
        let idx = |n: usize, ch: usize, ti: usize, j: usize| ((n * c + ch) * t + ti) * vv + j;
        let (mean, var, batch_stats) = match fixed {
            Some((m, v)) => {
                if m.len() != feats || v.len() != feats {
                    return Err(Error::dim("batch_norm", "running statistics size"));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                let cnt = (nb * t) as f64;
                let mut mean = vec![0.0; feats];
                let mut var = vec![0.0; feats];
                for n in 0..nb {
                    for ch in 0..c {
                        for ti in 0..t {
                            for j in 0..vv {
                                mean[ch * vv + j] += xd[idx(n, ch, ti, j)];
                            }
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= cnt);
                for n in 0..nb {
                    for ch in 0..c {
                        for ti in 0..t {
                            for j in 0..vv {
                                let d = xd[idx(n, ch, ti, j)] - mean[ch * vv + j];
                                var[ch * vv + j] += d * d;
                            }
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= cnt);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for n in 0..nb {
            for ch in 0..c {
                for ti in 0..t {
                    for j in 0..vv {
                        let i = idx(n, ch, ti, j);
                        let f = ch * vv + j;
                        xhat[i] = (xd[i] - mean[f]) * inv_std[f];
                        out[i] = gv.data()[f] * xhat[i] + bv.data()[f];
                    }
                }
            }
        }
        let y = self.tape.push(
            Tensor::new(x.shape(), out)?,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats,
            },
            &[self.id, gamma.id, beta.id],
        );
        Ok((y, batch_stats.then_some((mean, var))))
    }

    /// Average over persons, frames and points: `[B·M, C, T, V] -> [B, C]`.
    pub fn global_avg_pool(&self, persons: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [nb, c, t, vv] = expect_rank4("global_avg_pool", &x)?;
        if persons == 0 || nb % persons != 0 {
            return Err(Error::dim(
                "global_avg_pool",
                format!("{nb} rows not divisible by {persons} persons"),
            ));
        }
        let b = nb / persons;
        let denom = (persons * t * vv) as f64;
        let xd = x.data();
        let mut out = vec![0.0; b * c];
        for n in 0..nb {
            for ch in 0..c {
                let base = (n * c + ch) * t * vv;
                let s: f64 = xd[base..base + t * vv].iter().sum();
                out[(n / persons) * c + ch] += s;
            }
        }
        out.iter_mut().for_each(|o| *o /= denom);
        let y = Tensor::new(&[b, c], out)?;
        Ok(self.tape.push(y, Op::GlobalAvgPool { x: self.id, persons }, &[self.id]))
    }

    /// Per-class binary cross-entropy on `sigmoid(logits)`, summed over
    /// classes and averaged over the batch.
    pub fn bce_with_logits(&self, labels: &[usize]) -> Result<Var<'t>> {
        let z = self.value();
        let (b, n) = z.dims2()?;
        check_labels("bce_with_logits", labels, b, n)?;
        let mut total = 0.0;
        for i in 0..b {
            for j in 0..n {
                let x = z.data()[i * n + j];
                let y = if labels[i] == j { 1.0 } else { 0.0 };
                total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            }
        }
        Ok(self.tape.push(
            Tensor::scalar(total / b as f64),
            Op::BceWithLogits {
                logits: self.id,
                labels: Rc::new(labels.to_vec()),
            },
            &[self.id],
        ))
    }

    /// Softmax cross-entropy averaged over the batch.
    pub fn softmax_ce(&self, labels: &[usize]) -> Result<Var<'t>> {
        let z = self.value();
        let (b, n) = z.dims2()?;
        check_labels("softmax_ce", labels, b, n)?;
        let mut total = 0.0;
        for i in 0..b {
            let row = &z.data()[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
        }
        Ok(self.tape.push(
            Tensor::scalar(total / b as f64),
            Op::SoftmaxCe {
                logits: self.id,
                labels: Rc::new(labels.to_vec()),
            },
            &[self.id],
        ))
    }
}

/// Stack `1×n` (or length-`n`) nodes into an `k×n` node.
pub fn stack_rows<'t>(rows: &[Var<'t>]) -> Result<Var<'t>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::dim("stack_rows", "no rows"))?;
    let tape = first.tape;
    let n = first.value().len();
    let mut data = Vec::with_capacity(rows.len() * n);
    for r in rows {
        let v = r.value();
        if v.len() != n || (v.rank() == 2 && v.shape()[0] != 1) {
            return Err(Error::dim("stack_rows", format!("row shape {:?}", v.shape())));
        }
        data.extend_from_slice(v.data());
    }
    let ids: Vec<usize> = rows.iter().map(|r| r.id).collect();
    let c = Tensor::new(&[rows.len(), n], data)?;
    Ok(tape.push(c, Op::StackRows(ids.clone()), &ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t2(&[&[0.0], &[1.0]]));
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[2.0, 4.0]);

        let x = tape.constant(t2(&[&[1.5, -2.0, 0.5], &[3.0, 4.0, -1.0]]));
        let i2 = tape.constant(Tensor::eye(2));
        assert_eq!(*i2.matmul(&x).unwrap().value(), *x.value());

        let bad = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(a.matmul(&bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_special_rows() {
        let tape = Tape::new();
        let one = tape.constant(t2(&[&[5.0]])).softmax_rows().unwrap();
        assert_eq!(one.value().data(), &[1.0]);
        let zeros = tape.constant(Tensor::zeros(&[1, 3])).softmax_rows().unwrap();
        for &p in zeros.value().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(t2(&[&[1000.0, 0.0]])).softmax_rows().unwrap();
        assert!(big.value().is_finite());
    }

    #[test]
    fn sigmoid_symmetry() {
        let tape = Tape::new();
        let x = Tensor::new(&[5], vec![-3.0, -0.5, 0.0, 0.5, 40.0]).unwrap();
        let y = tape.constant(x.clone()).sigmoid().value();
        let yn = tape.constant(x.map(|v| -v)).sigmoid().value();
        assert_eq!(y.data()[2], 0.5);
        for (a, b) in y.data().iter().zip(yn.data()) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_and_ones_broadcast() {
        let tape = Tape::new();
        let r = tape.constant(Tensor::new(&[2], vec![-1.0, 3.0]).unwrap()).relu();
        assert_eq!(r.value().data(), &[0.0, 3.0]);
        let a = tape.constant(t2(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let ones = tape.constant(Tensor::ones(&[1, 3]));
        assert_eq!(*a.mul_row(&ones).unwrap().value(), *a.value());
        let wrong = tape.constant(Tensor::ones(&[1, 2]));
        assert!(a.mul_row(&wrong).is_err());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_grad());
        let y = tape.leaf(Tensor::new(&[2], vec![7.0, 8.0]).unwrap().with_grad());
        let loss = x.mul(&x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
        assert_eq!(g.get(y).data(), &[0.0, 0.0]);
        assert!(!g.is_reached(y));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2, 2]).with_grad());
        assert!(matches!(tape.backward(x.relu()), Err(Error::Contract(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, -2.0]).unwrap().with_grad());
        let loss = x.detach().mul(&x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, -2.0]);
    }

    #[test]
    fn temporal_conv_rejects_bad_config() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 4, 2]));
        let even = tape.constant(Tensor::ones(&[1, 2]));
        assert!(matches!(x.temporal_conv(&even, 1), Err(Error::Config(_))));
        let k = tape.constant(Tensor::ones(&[1, 3]));
        assert!(matches!(x.temporal_conv(&k, 3), Err(Error::Config(_))));
    }

    #[test]
    fn mean_axis_shapes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        assert_eq!(x.mean_axis(0).unwrap().value().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(x.mean_axis(1).unwrap().value().data(), &[2.0, 5.0]);
        assert!(x.mean_axis(2).is_err());
    }
}
