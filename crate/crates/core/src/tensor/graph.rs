use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Numerically stable logistic function, kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: usize, b: usize, trans_b: bool },
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    Sigmoid(usize),
    Relu(usize),
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    NarrowCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows { x: usize, idx: Vec<usize> },
    MeanRows { x: usize, idx: Vec<usize> },
    Sum(usize),
    Mean(usize),
    Dropout { x: usize, mask: Vec<f64> },
    DepthwiseConv { x: usize, w: usize },
    BceLogits { logits: usize, targets: Vec<f64> },
    BceProbs { probs: usize, targets: Vec<f64>, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording tape for one forward pass.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    training: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self::build(false, 0)
    }

    /// Training graph with dropout masks drawn from a seeded stream.
    pub fn training(seed: u64) -> Self {
        Self::build(true, seed)
    }

    fn build(training: bool, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            training,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose gradient is tracked.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a registered parameter. Repeated requests return the same
    /// node so that gradients of every use accumulate in one place.
    pub fn param<'g>(&'g self, store: &ParamStore, id: ParamId) -> Var<'g> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                graph: self,
                id: node,
            };
        }
        let v = self.push(store.tensor(id).clone(), Op::Param, true);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for i in (0..=loss.id).rev() {
            let Some(dy) = grads[i].take() else { continue };
            backprop_node(&nodes, i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn acc<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    idx: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].needs_grad {
        return None;
    }
    let n = nodes[idx].value.numel();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; n]))
}

/// Adds `dy` into a same-shape or scalar operand gradient.
fn acc_broadcast(nodes: &[Node], grads: &mut [Option<Vec<f64>>], idx: usize, dy: &[f64], sign: f64) {
    if let Some(g) = acc(nodes, grads, idx) {
        if g.len() == dy.len() {
            for (g, d) in g.iter_mut().zip(dy) {
                *g += sign * d;
            }
        } else {
            g[0] += sign * dy.iter().sum::<f64>();
        }
    }
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn backprop_node(nodes: &[Node], i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf | Op::Param => {}
        &Op::MatMul { a, b, trans_b } => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = node.value.shape()[1];
            if let Some(ga) = acc(nodes, grads, a) {
                if trans_b {
                    // dA = dC·B, B is n×k
                    gemm(m, n, k, dy, (n, 1), bv.data(), (k, 1), ga, 1.0);
                } else {
                    // dA = dC·Bᵀ, B is k×n
                    gemm(m, n, k, dy, (n, 1), bv.data(), (1, n), ga, 1.0);
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                if trans_b {
                    // dB = dCᵀ·A
                    gemm(n, m, k, dy, (1, n), av.data(), (k, 1), gb, 1.0);
                } else {
                    // dB = Aᵀ·dC
                    gemm(k, m, n, av.data(), (1, k), dy, (n, 1), gb, 1.0);
                }
            }
        }
        &Op::Transpose(x) => {
            let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
            if let Some(g) = acc(nodes, grads, x) {
                // y is r×c, x is c×r
                for p in 0..r {
                    for q in 0..c {
                        g[q * r + p] += dy[p * c + q];
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            acc_broadcast(nodes, grads, a, dy, 1.0);
            acc_broadcast(nodes, grads, b, dy, 1.0);
        }
        &Op::Sub(a, b) => {
            acc_broadcast(nodes, grads, a, dy, 1.0);
            acc_broadcast(nodes, grads, b, dy, -1.0);
        }
        &Op::Mul(a, b) => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            let at = |j: usize| if av.len() == 1 { av[0] } else { av[j] };
            let bt = |j: usize| if bv.len() == 1 { bv[0] } else { bv[j] };
            let da: Vec<f64> = dy.iter().enumerate().map(|(j, d)| d * bt(j)).collect();
            let db: Vec<f64> = dy.iter().enumerate().map(|(j, d)| d * at(j)).collect();
            acc_broadcast(nodes, grads, a, &da, 1.0);
            acc_broadcast(nodes, grads, b, &db, 1.0);
        }
        &Op::Scale(x, s) => {
            if let Some(g) = acc(nodes, grads, x) {
                for (g, d) in g.iter_mut().zip(dy) {
                    *g += s * d;
                }
            }
        }
        &Op::AddBias(x, b) => {
            if let Some(g) = acc(nodes, grads, x) {
                for (g, d) in g.iter_mut().zip(dy) {
                    *g += d;
                }
            }
            let c = node.value.cols();
            if let Some(g) = acc(nodes, grads, b) {
                for row in dy.chunks(c) {
                    for (g, d) in g.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
        }
        &Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(g) = acc(nodes, grads, x) {
                for j in 0..y.len() {
                    g[j] += dy[j] * y[j] * (1.0 - y[j]);
                }
            }
        }
        &Op::Relu(x) => {
            let xv = nodes[x].value.data();
            if let Some(g) = acc(nodes, grads, x) {
                for j in 0..xv.len() {
                    if xv[j] > 0.0 {
                        g[j] += dy[j];
                    }
                }
            }
        }
        &Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = split3(node.value.shape(), axis);
            if let Some(g) = acc(nodes, grads, x) {
                for o in 0..outer {
                    for q in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + q;
                        let s: f64 = (0..len).map(|l| dy[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            g[at(l)] += y[at(l)] * (dy[at(l)] - s);
                        }
                    }
                }
            }
        }
        &Op::LayerNorm { x, gain, bias, eps } => {
            let xv = nodes[x].value.data();
            let gv = nodes[gain].value.data();
            let c = gv.len();
            let rows = xv.len() / c;
            let mut dx = vec![0.0; xv.len()];
            let mut dg = vec![0.0; c];
            let mut db = vec![0.0; c];
            for r in 0..rows {
                let xr = &xv[r * c..(r + 1) * c];
                let dyr = &dy[r * c..(r + 1) * c];
                let mean = xr.iter().sum::<f64>() / c as f64;
                let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for j in 0..c {
                    let xhat = (xr[j] - mean) * rstd;
                    let dxhat = dyr[j] * gv[j];
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                    dg[j] += dyr[j] * xhat;
                    db[j] += dyr[j];
                }
                m1 /= c as f64;
                m2 /= c as f64;
                for j in 0..c {
                    let xhat = (xr[j] - mean) * rstd;
                    dx[r * c + j] = rstd * (dyr[j] * gv[j] - m1 - xhat * m2);
                }
            }
            acc_broadcast(nodes, grads, x, &dx, 1.0);
            acc_broadcast(nodes, grads, gain, &dg, 1.0);
            acc_broadcast(nodes, grads, bias, &db, 1.0);
        }
        &Op::NarrowCols { x, start } => {
            let len = node.value.cols();
            let c = nodes[x].value.cols();
            if let Some(g) = acc(nodes, grads, x) {
                for (r, row) in dy.chunks(len).enumerate() {
                    for (j, d) in row.iter().enumerate() {
                        g[r * c + start + j] += d;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let c = node.value.cols();
            let mut off = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                if let Some(g) = acc(nodes, grads, p) {
                    for (r, row) in g.chunks_mut(pc).enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v += dy[r * c + off + j];
                        }
                    }
                }
                off += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p].value.numel();
                if let Some(g) = acc(nodes, grads, p) {
                    for (g, d) in g.iter_mut().zip(&dy[off..off + n]) {
                        *g += d;
                    }
                }
                off += n;
            }
        }
        Op::GatherRows { x, idx } => {
            let c = node.value.cols();
            if let Some(g) = acc(nodes, grads, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        g[src * c + j] += dy[r * c + j];
                    }
                }
            }
        }
        Op::MeanRows { x, idx } => {
            let c = node.value.cols();
            let w = 1.0 / idx.len() as f64;
            if let Some(g) = acc(nodes, grads, *x) {
                for &src in idx {
                    for j in 0..c {
                        g[src * c + j] += w * dy[j];
                    }
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(g) = acc(nodes, grads, x) {
                for v in g.iter_mut() {
                    *v += dy[0];
                }
            }
        }
        &Op::Mean(x) => {
            let n = nodes[x].value.numel() as f64;
            if let Some(g) = acc(nodes, grads, x) {
                for v in g.iter_mut() {
                    *v += dy[0] / n;
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(g) = acc(nodes, grads, *x) {
                for j in 0..mask.len() {
                    g[j] += dy[j] * mask[j];
                }
            }
        }
        &Op::DepthwiseConv { x, w } => {
            let xv = nodes[x].value.data();
            let wv = nodes[w].value.data();
            let (t_len, c) = (nodes[x].value.shape()[0], nodes[x].value.shape()[1]);
            let k = nodes[w].value.shape()[1];
            let half = (k / 2) as isize;
            let mut dx = vec![0.0; xv.len()];
            let mut dw = vec![0.0; wv.len()];
            for t in 0..t_len {
                for j in 0..k {
                    let src = t as isize + j as isize - half;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let src = src as usize;
                    for ch in 0..c {
                        let d = dy[t * c + ch];
                        dx[src * c + ch] += d * wv[ch * k + j];
                        dw[ch * k + j] += d * xv[src * c + ch];
                    }
                }
            }
            acc_broadcast(nodes, grads, x, &dx, 1.0);
            acc_broadcast(nodes, grads, w, &dw, 1.0);
        }
        Op::BceLogits { logits, targets } => {
            let z = nodes[*logits].value.data();
            let n = z.len() as f64;
            if let Some(g) = acc(nodes, grads, *logits) {
                for j in 0..z.len() {
                    g[j] += dy[0] * (sigmoid(z[j]) - targets[j]) / n;
                }
            }
        }
        Op::BceProbs {
            probs,
            targets,
            eps,
        } => {
            let p = nodes[*probs].value.data();
            let n = p.len() as f64;
            if let Some(g) = acc(nodes, grads, *probs) {
                for j in 0..p.len() {
                    if p[j] > *eps && p[j] < 1.0 - eps {
                        g[j] += dy[0] * (p[j] - targets[j]) / (p[j] * (1.0 - p[j])) / n;
                    }
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).and_then(|&n| self.grads[n].as_deref())
    }

    /// Parameter gradients in ascending id order.
    pub fn params(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &n)| self.grads[n].as_deref().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.cols()
    }

    /// First element; meaningful for scalar nodes.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.data()[0]
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'g> {
        let value = f(&self.graph.nodes.borrow()[self.id].value);
        let needs = self.graph.needs(&[self.id]);
        self.graph.push(value, op, needs)
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        self.unary(op, |t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
                .expect("shape preserved")
        })
    }

    fn binary_elementwise(
        &self,
        other: Var<'g>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            let shape = if a.shape() == b.shape() || b.numel() == 1 {
                a.shape().to_vec()
            } else if a.numel() == 1 {
                b.shape().to_vec()
            } else {
                return Err(Error::dim(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
            };
            let n: usize = shape.iter().product();
            let (ad, bd) = (a.data(), b.data());
            let data = (0..n)
                .map(|j| {
                    let x = if ad.len() == 1 { ad[0] } else { ad[j] };
                    let y = if bd.len() == 1 { bd[0] } else { bd[j] };
                    f(x, y)
                })
                .collect();
            Tensor::new(shape, data)?
        };
        let needs = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(value, op, needs))
    }

    fn matmul_impl(&self, other: Var<'g>, trans_b: bool) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            if a.rank() != 2 || b.rank() != 2 {
                return Err(Error::dim("matmul", "operands must be rank 2"));
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (kb, n, b_strides) = if trans_b {
                (b.shape()[1], b.shape()[0], (1, b.shape()[1]))
            } else {
                (b.shape()[0], b.shape()[1], (b.shape()[1], 1))
            };
            if k != kb {
                return Err(Error::dim(
                    "matmul",
                    format!("{:?} x {:?}{}", a.shape(), b.shape(), if trans_b { "ᵀ" } else { "" }),
                ));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), (k, 1), b.data(), b_strides, &mut out, 0.0);
            Tensor::new(vec![m, n], out)?
        };
        let needs = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b,
            },
            needs,
        ))
    }

    /// `self · other`.
    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.matmul_impl(other, true)
    }

    pub fn t(&self) -> Result<Var<'g>> {
        let value = self.graph.nodes.borrow()[self.id].value.transpose()?;
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(value, Op::Transpose(self.id), needs))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary_elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary_elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary_elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Var<'g> {
        self.map(Op::Scale(self.id, s), |v| v * s)
    }

    /// Adds a length-C vector to every row of an R×C matrix.
    pub fn add_bias(&self, bias: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            if b.numel() != x.cols() {
                return Err(Error::dim(
                    "add_bias",
                    format!("bias {:?} for input {:?}", b.shape(), x.shape()),
                ));
            }
            let c = x.cols();
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(j, v)| v + b.data()[j % c])
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let needs = self.graph.needs(&[self.id, bias.id]);
        Ok(self.graph.push(value, Op::AddBias(self.id, bias.id), needs))
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn relu(&self) -> Var<'g> {
        self.map(Op::Relu(self.id), |v| v.max(0.0))
    }

    /// `x·σ(x)`.
    pub fn swish(&self) -> Var<'g> {
        let s = self.sigmoid();
        self.mul(s).expect("same shape")
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            if axis >= x.rank() {
                return Err(Error::dim("softmax", format!("axis {axis} of {:?}", x.shape())));
            }
            if !x.is_finite() {
                return Err(Error::Numeric("softmax"));
            }
            let (outer, len, inner) = split3(x.shape(), axis);
            let xd = x.data();
            let mut out = vec![0.0; xd.len()];
            for o in 0..outer {
                for q in 0..inner {
                    let at = |l: usize| o * len * inner + l * inner + q;
                    let mx = (0..len).map(|l| xd[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for l in 0..len {
                        let e = (xd[at(l)] - mx).exp();
                        out[at(l)] = e;
                        s += e;
                    }
                    for l in 0..len {
                        out[at(l)] /= s;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(value, Op::Softmax { x: self.id, axis }, needs))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&self, gain: Var<'g>, bias: Var<'g>, eps: f64) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let g = nodes[gain.id].value.data();
            let b = nodes[bias.id].value.data();
            let c = x.cols();
            if c == 0 || g.len() != c || b.len() != c {
                return Err(Error::dim(
                    "layer_norm",
                    format!("input {:?}, gain {}, bias {}", x.shape(), g.len(), b.len()),
                ));
            }
            let mut out = vec![0.0; x.numel()];
            for (r, xr) in x.data().chunks(c).enumerate() {
                let mean = xr.iter().sum::<f64>() / c as f64;
                let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                for j in 0..c {
                    out[r * c + j] = (xr[j] - mean) * rstd * g[j] + b[j];
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        let needs = self.graph.needs(&[self.id, gain.id, bias.id]);
        Ok(self.graph.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
            needs,
        ))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let c = x.cols();
            if x.rank() != 2 || start + len > c {
                return Err(Error::dim(
                    "narrow_cols",
                    format!("{start}..{} of {:?}", start + len, x.shape()),
                ));
            }
            let mut data = Vec::with_capacity(x.rows() * len);
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row(r)[start..start + len]);
            }
            Tensor::new(vec![x.rows(), len], data)?
        };
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(value, Op::NarrowCols { x: self.id, start }, needs))
    }

    pub fn concat_cols(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let graph = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?
            .graph;
        let value = {
            let nodes = graph.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows();
            let total: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
            if parts.iter().any(|p| nodes[p.id].value.rows() != rows) {
                return Err(Error::dim("concat_cols", "row counts differ"));
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = graph.needs(&ids);
        Ok(graph.push(value, Op::ConcatCols(ids), needs))
    }

    pub fn concat_rows(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let graph = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?
            .graph;
        let value = {
            let nodes = graph.nodes.borrow();
            let cols = nodes[parts[0].id].value.cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.id].value;
                if t.cols() != cols {
                    return Err(Error::dim(
                        "concat_rows",
                        format!("{} columns vs {cols}", t.cols()),
                    ));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, cols], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = graph.needs(&ids);
        Ok(graph.push(value, Op::ConcatRows(ids), needs))
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::dim("gather_rows", format!("row {bad} of {:?}", x.shape())));
            }
            x.select_rows(idx)
        };
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::GatherRows {
                x: self.id,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Mean of the selected rows, as a 1×C matrix.
    pub fn mean_rows(&self, idx: &[usize]) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            if idx.is_empty() {
                return Err(Error::dim("mean_rows", "empty row selection"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::dim("mean_rows", format!("row {bad} of {:?}", x.shape())));
            }
            let c = x.cols();
            let mut out = vec![0.0; c];
            for &i in idx {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            let w = idx.len() as f64;
            out.iter_mut().for_each(|o| *o /= w);
            Tensor::new(vec![1, c], out)?
        };
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::MeanRows {
                x: self.id,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum(&self) -> Var<'g> {
        self.unary(Op::Sum(self.id), |t| Tensor::scalar(t.data().iter().sum()))
    }

    pub fn mean(&self) -> Var<'g> {
        self.unary(Op::Mean(self.id), |t| {
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel().max(1) as f64)
        })
    }

    /// Inverted dropout; the identity outside training graphs or for p = 0.
    pub fn dropout(&self, p: f64) -> Var<'g> {
        if !self.graph.training || p <= 0.0 {
            return *self;
        }
        let n = self.graph.nodes.borrow()[self.id].value.numel();
        let keep = 1.0 - p;
        let mask: Vec<f64> = {
            let mut rng = self.graph.rng.borrow_mut();
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        };
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
        };
        let needs = self.graph.needs(&[self.id]);
        self.graph.push(value, Op::Dropout { x: self.id, mask }, needs)
    }

    /// Per-channel convolution over time of a T×C input with a C×K kernel,
    /// zero padded so that the output is T×C (K odd).
    pub fn depthwise_conv1d(&self, kernel: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let w = &nodes[kernel.id].value;
            if x.rank() != 2 || w.rank() != 2 || w.shape()[0] != x.cols() || w.shape()[1].is_multiple_of(2) {
                return Err(Error::dim(
                    "depthwise_conv1d",
                    format!("input {:?}, kernel {:?}", x.shape(), w.shape()),
                ));
            }
            let (t_len, c) = (x.rows(), x.cols());
            let k = w.shape()[1];
            let half = (k / 2) as isize;
            let (xd, wd) = (x.data(), w.data());
            let mut out = vec![0.0; t_len * c];
            for t in 0..t_len {
                for j in 0..k {
                    let src = t as isize + j as isize - half;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let src = src as usize;
                    for ch in 0..c {
                        out[t * c + ch] += wd[ch * k + j] * xd[src * c + ch];
                    }
                }
            }
            Tensor::new(vec![t_len, c], out)?
        };
        let needs = self.graph.needs(&[self.id, kernel.id]);
        Ok(self.graph.push(
            value,
            Op::DepthwiseConv {
                x: self.id,
                w: kernel.id,
            },
            needs,
        ))
    }

    /// Mean binary cross-entropy of `σ(self)` against `targets`, computed in
    /// the logit domain.
    pub fn bce_with_logits(&self, targets: &Tensor) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let z = &nodes[self.id].value;
            if z.shape() != targets.shape() {
                return Err(Error::dim(
                    "bce_with_logits",
                    format!("{:?} vs targets {:?}", z.shape(), targets.shape()),
                ));
            }
            let n = z.numel().max(1) as f64;
            let s: f64 = z
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
                .sum();
            Tensor::scalar(s / n)
        };
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::BceLogits {
                logits: self.id,
                targets: targets.data().to_vec(),
            },
            needs,
        ))
    }

    /// Mean binary cross-entropy of probabilities against `targets`, with the
    /// probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce(&self, targets: &Tensor, eps: f64) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let p = &nodes[self.id].value;
            if p.shape() != targets.shape() {
                return Err(Error::dim(
                    "bce",
                    format!("{:?} vs targets {:?}", p.shape(), targets.shape()),
                ));
            }
            let n = p.numel().max(1) as f64;
            let s: f64 = p
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&p, &y)| {
                    let p = p.clamp(eps, 1.0 - eps);
                    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
                })
                .sum();
            Tensor::scalar(s / n)
        };
        let needs = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::BceProbs {
                probs: self.id,
                targets: targets.data().to_vec(),
                eps,
            },
            needs,
        ))
    }
}
