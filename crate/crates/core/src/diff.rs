//! A small reverse-mode differentiation tape over rank-2 `f64` tensors.
//!
//! Every differentiable value lives on a [`Tape`] and is addressed by a
//! [`Var`]. Operations append nodes in execution order, so parents always
//! precede children and [`Tape::backward`] is a single reverse sweep.
//! Only the operations the models in this crate use are provided.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "tensor",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    /// Column vector.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Dense kernels shared by the tape and the tape-free inference paths.
pub mod kernels {
    /// `out[n×o] = x[n×i] · w[i×o] + b[o]`
    pub fn affine(x: &[f64], w: &[f64], b: &[f64], n: usize, inp: usize, out: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(b);
        }
        for r in 0..n {
            let row = &mut y[r * out..(r + 1) * out];
            let xr = &x[r * inp..(r + 1) * inp];
            for (k, &xv) in xr.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wk = &w[k * out..(k + 1) * out];
                for (yo, &wv) in row.iter_mut().zip(wk) {
                    *yo += xv * wv;
                }
            }
        }
        y
    }

    /// `edge[e] += node[src[e]]`
    pub fn gather_add_into(edge: &mut [f64], node: &[f64], src: &[usize]) {
        for (v, &s) in edge.iter_mut().zip(src) {
            *v += node[s];
        }
    }

    /// Sums edge values into their destination nodes, in edge order.
    pub fn scatter_add(edge: &[f64], dst: &[usize], node_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; node_count];
        for (&v, &d) in edge.iter().zip(dst) {
            out[d] += v;
        }
        out
    }

    pub fn check_index(op: &'static str, index: &[usize], len: usize) -> crate::error::Result<()> {
        match index.iter().find(|&&i| i >= len) {
            Some(&i) => Err(crate::error::Error::Index { op, index: i, len }),
            None => Ok(()),
        }
    }
}

/// KL approximation constants for the log-uniform prior.
pub const KL_K1: f64 = 0.63576;
pub const KL_K2: f64 = 1.87320;
pub const KL_K3: f64 = 1.48695;

/// Clamp range of the derived log dropout rate.
pub const LOG_ALPHA_MIN: f64 = -10.0;
pub const LOG_ALPHA_MAX: f64 = 10.0;

const THETA_EPS: f64 = 1e-16;

/// Raw (unclamped) and clamped log alpha for one weight.
pub fn log_alpha_of(theta: f64, log_sigma2: f64) -> (f64, f64) {
    let raw = log_sigma2 - (theta * theta + THETA_EPS).ln();
    (raw, raw.clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX))
}

/// Negative KL (up to its additive constant) of one weight as a function
/// of its log alpha.
pub fn neg_kl_approx(log_alpha: f64) -> f64 {
    KL_K1 * sigmoid_scalar(KL_K2 + KL_K3 * log_alpha) - 0.5 * (-log_alpha).exp().ln_1p()
}

fn neg_kl_derivative(log_alpha: f64) -> f64 {
    let s = sigmoid_scalar(KL_K2 + KL_K3 * log_alpha);
    KL_K1 * KL_K3 * s * (1.0 - s) + 0.5 * sigmoid_scalar(-log_alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Const,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    GatherAdd {
        edges: Var,
        nodes: Var,
        index: Arc<[usize]>,
    },
    ScatterAdd {
        edges: Var,
        index: Arc<[usize]>,
    },
    Select {
        x: Var,
        index: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Stack(Vec<Var>),
    Sum {
        x: Var,
    },
    SoftmaxCe {
        x: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    VdAffine {
        x: Var,
        theta: Var,
        log_sigma2: Var,
        bias: Var,
        eps: Vec<f64>,
        std: Vec<f64>,
    },
    VdKl {
        theta: Var,
        log_sigma2: Var,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records operations in execution order. One tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Const, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    /// Accumulated gradient of a leaf (zeros if backward never reached it).
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.1 != ws.0 {
            return Err(Error::Shape {
                op: "affine",
                left: xs,
                right: ws,
            });
        }
        if bs.0 * bs.1 != ws.1 {
            return Err(Error::Shape {
                op: "affine bias",
                left: ws,
                right: bs,
            });
        }
        let y = kernels::affine(
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
            xs.0,
            xs.1,
            ws.1,
        );
        Ok(self.push(Op::Affine { x, w, b }, Tensor::new(xs.0, ws.1, y)?))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor {
            rows: t.rows,
            cols: t.cols,
            data,
        };
        self.push(Op::Act { x, kind }, value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// `out[e] = edges[e] + nodes[index[e]]`
    pub fn gather_add(&mut self, edges: Var, nodes: Var, index: Arc<[usize]>) -> Result<Var> {
        let e = self.value(edges);
        if e.len() != index.len() {
            return Err(Error::Shape {
                op: "gather_add",
                left: e.shape(),
                right: (index.len(), 1),
            });
        }
        kernels::check_index("gather_add", &index, self.value(nodes).len())?;
        let mut data = e.data.clone();
        kernels::gather_add_into(&mut data, &self.value(nodes).data, &index);
        Ok(self.push(Op::GatherAdd { edges, nodes, index }, Tensor::column(data)))
    }

    /// `out[v] = sum of edges[e] with index[e] = v`; untouched nodes are 0.
    pub fn scatter_add(&mut self, edges: Var, index: Arc<[usize]>, node_count: usize) -> Result<Var> {
        let e = self.value(edges);
        if e.len() != index.len() {
            return Err(Error::Shape {
                op: "scatter_add",
                left: e.shape(),
                right: (index.len(), 1),
            });
        }
        kernels::check_index("scatter_add", &index, node_count)?;
        let data = kernels::scatter_add(&e.data, &index, node_count);
        Ok(self.push(Op::ScatterAdd { edges, index }, Tensor::column(data)))
    }

    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if index >= t.len() {
            return Err(Error::Index {
                op: "select",
                index,
                len: t.len(),
            });
        }
        let v = t.data[index];
        Ok(self.push(Op::Select { x, index }, Tensor::scalar(v)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "add",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let value = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
        };
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let value = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|v| v * factor).collect(),
        };
        self.push(Op::Scale { x, factor }, value)
    }

    /// Stacks scalars into a column vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(xs.len());
        for &x in xs {
            let t = self.value(x);
            if t.len() != 1 {
                return Err(Error::Shape {
                    op: "stack",
                    left: t.shape(),
                    right: (1, 1),
                });
            }
            data.push(t.data[0]);
        }
        Ok(self.push(Op::Stack(xs.to_vec()), Tensor::column(data)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    /// `-log softmax(scores)[label]` with max subtraction.
    pub fn softmax_cross_entropy(&mut self, x: Var, label: usize) -> Result<Var> {
        let s = &self.value(x).data;
        if label >= s.len() {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: label,
                len: s.len(),
            });
        }
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = z.ln() - (s[label] - max);
        Ok(self.push(Op::SoftmaxCe { x, label, probs }, Tensor::scalar(loss)))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::Shape {
                op: "mse",
                left: p.shape(),
                right: (target.len(), 1),
            });
        }
        let n = target.len().max(1) as f64;
        let l = p.data.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            Tensor::scalar(l),
        ))
    }

    /// Variational affine layer with local reparameterization:
    /// `x·θ + b + sqrt((x∘x)·(α∘θ∘θ)) ∘ ε`, `ε ~ N(0, I)` drawn from `rng`.
    pub fn vd_affine(
        &mut self,
        theta: Var,
        log_sigma2: Var,
        bias: Var,
        x: Var,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let (xs, ts, ls, bs) = (
            self.value(x).shape(),
            self.value(theta).shape(),
            self.value(log_sigma2).shape(),
            self.value(bias).shape(),
        );
        if xs.1 != ts.0 {
            return Err(Error::Shape {
                op: "vd_affine",
                left: xs,
                right: ts,
            });
        }
        if ts != ls {
            return Err(Error::Shape {
                op: "vd_affine log_sigma2",
                left: ts,
                right: ls,
            });
        }
        if bs.0 * bs.1 != ts.1 {
            return Err(Error::Shape {
                op: "vd_affine bias",
                left: ts,
                right: bs,
            });
        }
        let (n, inp, out) = (xs.0, xs.1, ts.1);
        let th = &self.value(theta).data;
        let variance: Vec<f64> = th
            .iter()
            .zip(&self.value(log_sigma2).data)
            .map(|(&t, &l)| log_alpha_of(t, l).1.exp() * t * t)
            .collect();
        let xv = &self.value(x).data;
        let x2: Vec<f64> = xv.iter().map(|v| v * v).collect();
        let mean = kernels::affine(xv, th, &self.value(bias).data, n, inp, out);
        let zero_bias = vec![0.0; out];
        let delta = kernels::affine(&x2, &variance, &zero_bias, n, inp, out);
        let std: Vec<f64> = delta.iter().map(|d| d.max(0.0).sqrt()).collect();
        let eps: Vec<f64> = (0..n * out)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let data = mean
            .iter()
            .zip(&std)
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok(self.push(
            Op::VdAffine {
                x,
                theta,
                log_sigma2,
                bias,
                eps,
                std,
            },
            Tensor::new(n, out, data)?,
        ))
    }

    /// Sum over weights of the approximate KL divergence to the
    /// log-uniform prior (additive constant dropped).
    pub fn vd_kl(&mut self, theta: Var, log_sigma2: Var) -> Result<Var> {
        let (t, l) = (self.value(theta), self.value(log_sigma2));
        if t.shape() != l.shape() {
            return Err(Error::Shape {
                op: "vd_kl",
                left: t.shape(),
                right: l.shape(),
            });
        }
        let kl: f64 = t
            .data
            .iter()
            .zip(&l.data)
            .map(|(&th, &ls)| -neg_kl_approx(log_alpha_of(th, ls).1))
            .sum();
        Ok(self.push(Op::VdKl { theta, log_sigma2 }, Tensor::scalar(kl)))
    }

    /// Propagates d`loss` to every leaf reachable from it. Leaf gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Leaf => {
                    let (r, c) = node.value.shape();
                    let slot = self.grads[i].get_or_insert_with(|| Tensor::zeros(r, c));
                    slot.data.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Affine { x, w, b } => {
                    let (xt, wt) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (n, inp, out) = (xt.rows, xt.cols, wt.cols);
                    acc(&mut adj, *b, out, |db| {
                        for r in 0..n {
                            for o in 0..out {
                                db[o] += g[r * out + o];
                            }
                        }
                    });
                    acc(&mut adj, *w, inp * out, |dw| {
                        for r in 0..n {
                            for k in 0..inp {
                                let xv = xt.data[r * inp + k];
                                if xv == 0.0 {
                                    continue;
                                }
                                for o in 0..out {
                                    dw[k * out + o] += xv * g[r * out + o];
                                }
                            }
                        }
                    });
                    if matches!(self.nodes[x.0].op, Op::Const) {
                        continue;
                    }
                    acc(&mut adj, *x, n * inp, |dx| {
                        for r in 0..n {
                            for k in 0..inp {
                                let mut s = 0.0;
                                for o in 0..out {
                                    s += g[r * out + o] * wt.data[k * out + o];
                                }
                                dx[r * inp + k] += s;
                            }
                        }
                    });
                }
                Op::Act { x, kind } => {
                    let xt = &self.nodes[x.0].value;
                    let y = &node.value.data;
                    acc(&mut adj, *x, xt.len(), |dx| {
                        for j in 0..dx.len() {
                            dx[j] += g[j] * kind.derivative(xt.data[j], y[j]);
                        }
                    });
                }
                Op::GatherAdd { edges, nodes, index } => {
                    let nv = self.nodes[nodes.0].value.len();
                    acc(&mut adj, *edges, g.len(), |de| {
                        de.iter_mut().zip(&g).for_each(|(d, v)| *d += v)
                    });
                    acc(&mut adj, *nodes, nv, |dn| {
                        for (v, &s) in g.iter().zip(index.iter()) {
                            dn[s] += v;
                        }
                    });
                }
                Op::ScatterAdd { edges, index } => {
                    acc(&mut adj, *edges, index.len(), |de| {
                        for (d, &t) in de.iter_mut().zip(index.iter()) {
                            *d += g[t];
                        }
                    });
                }
                Op::Select { x, index } => {
                    let len = self.nodes[x.0].value.len();
                    acc(&mut adj, *x, len, |dx| dx[*index] += g[0]);
                }
                Op::Add { a, b } => {
                    acc(&mut adj, *a, g.len(), |d| d.iter_mut().zip(&g).for_each(|(s, v)| *s += v));
                    acc(&mut adj, *b, g.len(), |d| d.iter_mut().zip(&g).for_each(|(s, v)| *s += v));
                }
                Op::Scale { x, factor } => {
                    acc(&mut adj, *x, g.len(), |d| {
                        d.iter_mut().zip(&g).for_each(|(s, v)| *s += v * factor)
                    });
                }
                Op::Stack(xs) => {
                    for (j, x) in xs.iter().enumerate() {
                        acc(&mut adj, *x, 1, |d| d[0] += g[j]);
                    }
                }
                Op::Sum { x } => {
                    let len = self.nodes[x.0].value.len();
                    acc(&mut adj, *x, len, |d| d.iter_mut().for_each(|s| *s += g[0]));
                }
                Op::SoftmaxCe { x, label, probs } => {
                    acc(&mut adj, *x, probs.len(), |d| {
                        for (j, p) in probs.iter().enumerate() {
                            let target = if j == *label { 1.0 } else { 0.0 };
                            d[j] += g[0] * (p - target);
                        }
                    });
                }
                Op::Mse { pred, target } => {
                    let p = &self.nodes[pred.0].value.data;
                    let n = target.len().max(1) as f64;
                    acc(&mut adj, *pred, p.len(), |d| {
                        for j in 0..p.len() {
                            d[j] += g[0] * 2.0 * (p[j] - target[j]) / n;
                        }
                    });
                }
                Op::VdAffine {
                    x,
                    theta,
                    log_sigma2,
                    bias,
                    eps,
                    std,
                } => {
                    let xt = &self.nodes[x.0].value;
                    let th = &self.nodes[theta.0].value;
                    let ls = &self.nodes[log_sigma2.0].value;
                    let (n, inp, out) = (xt.rows, xt.cols, th.cols);
                    // d loss / d delta, where std = sqrt(delta)
                    let ddelta: Vec<f64> = (0..n * out)
                        .map(|j| if std[j] > 0.0 { g[j] * eps[j] / (2.0 * std[j]) } else { 0.0 })
                        .collect();
                    let mut dtheta = vec![0.0; inp * out];
                    let mut dls = vec![0.0; inp * out];
                    let mut dx = vec![0.0; n * inp];
                    let mut db = vec![0.0; out];
                    for r in 0..n {
                        for o in 0..out {
                            db[o] += g[r * out + o];
                        }
                    }
                    for k in 0..inp {
                        for o in 0..out {
                            let j = k * out + o;
                            let t = th.data[j];
                            let (raw, la) = log_alpha_of(t, ls.data[j]);
                            let ea = la.exp();
                            let var = ea * t * t;
                            let mut dvar = 0.0;
                            let mut dmean_w = 0.0;
                            for r in 0..n {
                                let xv = xt.data[r * inp + k];
                                dmean_w += xv * g[r * out + o];
                                dvar += xv * xv * ddelta[r * out + o];
                                dx[r * inp + k] += g[r * out + o] * t + ddelta[r * out + o] * 2.0 * xv * var;
                            }
                            dtheta[j] += dmean_w + dvar * ea * 2.0 * t;
                            if raw > LOG_ALPHA_MIN && raw < LOG_ALPHA_MAX {
                                let dla = dvar * var;
                                dls[j] += dla;
                                dtheta[j] += dla * (-2.0 * t / (t * t + THETA_EPS));
                            }
                        }
                    }
                    acc(&mut adj, *bias, out, |d| d.iter_mut().zip(&db).for_each(|(s, v)| *s += v));
                    acc(&mut adj, *theta, inp * out, |d| {
                        d.iter_mut().zip(&dtheta).for_each(|(s, v)| *s += v)
                    });
                    acc(&mut adj, *log_sigma2, inp * out, |d| {
                        d.iter_mut().zip(&dls).for_each(|(s, v)| *s += v)
                    });
                    acc(&mut adj, *x, n * inp, |d| d.iter_mut().zip(&dx).for_each(|(s, v)| *s += v));
                }
                Op::VdKl { theta, log_sigma2 } => {
                    let th = &self.nodes[theta.0].value.data;
                    let ls = &self.nodes[log_sigma2.0].value.data;
                    let mut dtheta = vec![0.0; th.len()];
                    let mut dls = vec![0.0; th.len()];
                    for j in 0..th.len() {
                        let (raw, la) = log_alpha_of(th[j], ls[j]);
                        if raw > LOG_ALPHA_MIN && raw < LOG_ALPHA_MAX {
                            let dla = -g[0] * neg_kl_derivative(la);
                            dls[j] = dla;
                            dtheta[j] = dla * (-2.0 * th[j] / (th[j] * th[j] + THETA_EPS));
                        }
                    }
                    acc(&mut adj, *theta, th.len(), |d| {
                        d.iter_mut().zip(&dtheta).for_each(|(s, v)| *s += v)
                    });
                    acc(&mut adj, *log_sigma2, th.len(), |d| {
                        d.iter_mut().zip(&dls).for_each(|(s, v)| *s += v)
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradCheckMode {
    /// Every coordinate of every parameter.
    Exhaustive,
    /// A seeded random subset of coordinates per parameter.
    Sampled { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares backward-pass gradients of a scalar function against
/// central differences `(f(x+h) - f(x-h)) / 2h`.
///
/// `f` builds the function on a fresh tape from leaves holding `params`.
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, mode: GradCheckMode) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar_value(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: 0,
        coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = match mode {
            GradCheckMode::Exhaustive => (0..p.len()).collect(),
            GradCheckMode::Sampled { per_param, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pi as u64).wrapping_mul(0x9E37_79B9));
                if per_param >= p.len() {
                    (0..p.len()).collect()
                } else {
                    (0..per_param).map(|_| rng.random_range(0..p.len())).collect()
                }
            }
        };
        for c in coords {
            let orig = p.data[c];
            work[pi].data[c] = orig + step;
            let up = eval(&work)?;
            work[pi].data[c] = orig - step;
            let down = eval(&work)?;
            work[pi].data[c] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].data[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    param: pi,
                    coord: c,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
