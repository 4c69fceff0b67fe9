//! The gradient tape.
//!
//! Every primitive appends one node holding its forward value; node ids grow
//! monotonically, so creation order is a topological order and the backward
//! pass is a single reverse sweep.
//!
//! Primitives panic on shape mismatch, like slice indexing does. Layer-level
//! entry points (`nn::gru_cell` and the model code built on top) validate
//! their inputs and return [`Error::Dimension`] instead.

use crate::{Error, Gradients, ParamId, ParamStore, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    /// `w[m,n] · x[n]`
    MatVec(Var, Var),
    /// `h[L,n] · w[m,n]ᵀ`
    LinearRows(Var, Var),
    /// `a[L] · h[L,n]`
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// matrix `[L,k]` plus a row vector `[k]` on every row
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    OneMinus(Var),
    Scale(Var, f64),
    Offset(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    SumAll(Vec<Var>),
    Pick(Var, usize),
    Normalize(Var),
    Softmax(Var),
    Scatter(Var, Vec<usize>),
    Kl { q: Var, p: Var, floor: f64 },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// A forward computation recorded for reverse-mode differentiation.
///
/// Parameter values are borrowed from the store, never copied; each
/// parameter gets at most one node per graph.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => panic!("expected a vector or matrix, got shape {shape:?}"),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(i) => self.params.get(ParamId(i)).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let x = self.value(v);
        assert_eq!(x.len(), 1, "scalar_value on non-scalar node");
        x[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Constant, false)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(data, vec![n], Op::Constant, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.vector(vec![0.0; n])
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![v], vec![1], Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape().to_vec();
        let v = self.push(Vec::new(), shape, Op::Param(id.0), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (m, n) = rows_cols(self.shape(w));
        assert_eq!(self.shape(w).len(), 2, "matvec: weight must be a matrix");
        assert_eq!(self.value(x).len(), n, "matvec: {m}x{n} times {:?}", self.shape(x));
        let (wv, xv) = (self.value(w), self.value(x));
        let out = (0..m)
            .map(|i| dot(&wv[i * n..(i + 1) * n], xv))
            .collect();
        let rg = self.rg(w) || self.rg(x);
        self.push(out, vec![m], Op::MatVec(w, x), rg)
    }

    pub fn linear_rows(&mut self, h: Var, w: Var) -> Var {
        let (l, n) = rows_cols(self.shape(h));
        let (m, n2) = rows_cols(self.shape(w));
        assert_eq!(n, n2, "linear_rows: inner dimensions {n} vs {n2}");
        let (hv, wv) = (self.value(h), self.value(w));
        let mut out = Vec::with_capacity(l * m);
        for r in 0..l {
            let row = &hv[r * n..(r + 1) * n];
            for i in 0..m {
                out.push(dot(row, &wv[i * n..(i + 1) * n]));
            }
        }
        let rg = self.rg(h) || self.rg(w);
        self.push(out, vec![l, m], Op::LinearRows(h, w), rg)
    }

    pub fn vecmat(&mut self, a: Var, h: Var) -> Var {
        let (l, n) = rows_cols(self.shape(h));
        assert_eq!(self.value(a).len(), l, "vecmat: weights vs rows");
        let (av, hv) = (self.value(a), self.value(h));
        let mut out = vec![0.0; n];
        for r in 0..l {
            axpy(av[r], &hv[r * n..(r + 1) * n], &mut out);
        }
        let rg = self.rg(a) || self.rg(h);
        self.push(out, vec![n], Op::VecMat(a, h), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_row(&mut self, m: Var, v: Var) -> Var {
        let (l, k) = rows_cols(self.shape(m));
        assert_eq!(self.value(v).len(), k, "add_row: row width");
        let (mv, vv) = (self.value(m), self.value(v));
        let mut out = mv.to_vec();
        for r in 0..l {
            for (o, x) in out[r * k..(r + 1) * k].iter_mut().zip(vv) {
                *o += x;
            }
        }
        let shape = self.shape(m).to_vec();
        let rg = self.rg(m) || self.rg(v);
        self.push(out, shape, Op::AddRow(m, v), rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(out, shape, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    /// Adds a constant to every element (gradient passes through unchanged).
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Offset(a), |x| x + c)
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, vec![n], Op::Concat(parts.to_vec()), rg)
    }

    /// Stacks vectors (one row each) and matrices (all their rows) into one
    /// matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows: nothing to stack");
        let width = rows_cols(self.shape(parts[0])).1;
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(rows_cols(self.shape(p)).1, width, "stack_rows: ragged rows");
            out.extend_from_slice(self.value(p));
        }
        let rows = out.len() / width;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, vec![rows, width], Op::StackRows(parts.to_vec()), rg)
    }

    pub fn select_rows(&mut self, m: Var, rows: &[usize]) -> Var {
        let (l, k) = rows_cols(self.shape(m));
        let mv = self.value(m);
        let mut out = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            assert!(r < l, "select_rows: row {r} out of {l}");
            out.extend_from_slice(&mv[r * k..(r + 1) * k]);
        }
        let rg = self.rg(m);
        self.push(out, vec![rows.len(), k], Op::SelectRows(m, rows.to_vec()), rg)
    }

    /// Row `r` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, m: Var, r: usize) -> Var {
        let k = rows_cols(self.shape(m)).1;
        let v = self.select_rows(m, &[r]);
        self.nodes[v.0].shape = vec![k];
        v
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![s], vec![1], Op::Sum(a), rg)
    }

    /// Sum of scalar nodes; an empty list yields the constant 0.
    pub fn sum_all(&mut self, parts: &[Var]) -> Var {
        let mut s = 0.0;
        for &p in parts {
            s += self.scalar_value(p);
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(vec![s], vec![1], Op::SumAll(parts.to_vec()), rg)
    }

    pub fn pick(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a)[k];
        let rg = self.rg(a);
        self.push(vec![x], vec![1], Op::Pick(a, k), rg)
    }

    /// `x / Σx` for a nonnegative vector.
    pub fn normalize(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let out = self.value(a).iter().map(|x| x / s).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(out, shape, Op::Normalize(a), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_slice(self.value(a));
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(out, shape, Op::Softmax(a), rg)
    }

    /// `out[v] = Σ_{i: idx[i] = v} e[i]` with `out` of length `size`.
    pub fn scatter(&mut self, e: Var, idx: &[usize], size: usize) -> Var {
        let ev = self.value(e);
        assert_eq!(ev.len(), idx.len(), "scatter: values vs indices");
        let mut out = vec![0.0; size];
        for (&i, &x) in idx.iter().zip(ev) {
            out[i] += x;
        }
        let rg = self.rg(e);
        self.push(out, vec![size], Op::Scatter(e, idx.to_vec()), rg)
    }

    /// `Σ_l q_l · ln(q_l / max(p_l, floor))`, zero-mass terms of `q` dropped.
    pub fn kl(&mut self, q: Var, p: Var, floor: f64) -> Var {
        assert_eq!(self.shape(q), self.shape(p), "kl: shape mismatch");
        let v = kl_slice(self.value(q), self.value(p), floor);
        let rg = self.rg(q) || self.rg(p);
        self.push(vec![v], vec![1], Op::Kl { q, p, floor }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut out = Gradients::zeros_like(self.params);
        if !self.rg(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.nodes[v.0].shape.iter().product();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param(p) => out.add_to(*p, g),
            Op::MatVec(w, x) => {
                let (m, n) = rows_cols(self.shape(*w));
                let (wv, xv) = (self.value(*w), self.value(*x));
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..m {
                        axpy(g[r], xv, &mut dw[r * n..(r + 1) * n]);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..m {
                        axpy(g[r], &wv[r * n..(r + 1) * n], dx);
                    }
                }
            }
            Op::LinearRows(h, w) => {
                let (l, n) = rows_cols(self.shape(*h));
                let m = rows_cols(self.shape(*w)).0;
                let (hv, wv) = (self.value(*h), self.value(*w));
                if let Some(dh) = self.slot(grads, *h) {
                    for r in 0..l {
                        let dst = &mut dh[r * n..(r + 1) * n];
                        for k in 0..m {
                            axpy(g[r * m + k], &wv[k * n..(k + 1) * n], dst);
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..l {
                        let row = &hv[r * n..(r + 1) * n];
                        for k in 0..m {
                            axpy(g[r * m + k], row, &mut dw[k * n..(k + 1) * n]);
                        }
                    }
                }
            }
            Op::VecMat(a, h) => {
                let (l, n) = rows_cols(self.shape(*h));
                let (av, hv) = (self.value(*a), self.value(*h));
                if let Some(da) = self.slot(grads, *a) {
                    for r in 0..l {
                        da[r] += dot(g, &hv[r * n..(r + 1) * n]);
                    }
                }
                if let Some(dh) = self.slot(grads, *h) {
                    for r in 0..l {
                        axpy(av[r], g, &mut dh[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        axpy(1.0, g, d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    axpy(1.0, g, d);
                }
                if let Some(d) = self.slot(grads, *b) {
                    axpy(-1.0, g, d);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(d) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        d[k] += g[k] * bv[k];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for k in 0..g.len() {
                        d[k] += g[k] * av[k];
                    }
                }
            }
            Op::AddRow(m, v) => {
                if let Some(d) = self.slot(grads, *m) {
                    axpy(1.0, g, d);
                }
                if let Some(d) = self.slot(grads, *v) {
                    let k = d.len();
                    for row in g.chunks(k) {
                        axpy(1.0, row, d);
                    }
                }
            }
            Op::Sigmoid(a) => self.unary(grads, *a, g, |k| y[k] * (1.0 - y[k])),
            Op::Tanh(a) => self.unary(grads, *a, g, |k| 1.0 - y[k] * y[k]),
            Op::Exp(a) => self.unary(grads, *a, g, |k| y[k]),
            Op::Log(a) => {
                let x = self.value(*a);
                self.unary(grads, *a, g, |k| 1.0 / x[k])
            }
            Op::OneMinus(a) => self.unary(grads, *a, g, |_| -1.0),
            Op::Scale(a, c) => self.unary(grads, *a, g, |_| *c),
            Op::Offset(a) => self.unary(grads, *a, g, |_| 1.0),
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].shape.iter().product::<usize>();
                    if let Some(d) = self.slot(grads, p) {
                        axpy(1.0, &g[off..off + n], d);
                    }
                    off += n;
                }
            }
            Op::SelectRows(m, rows) => {
                let k = rows_cols(self.shape(*m)).1;
                if let Some(d) = self.slot(grads, *m) {
                    for (j, &r) in rows.iter().enumerate() {
                        axpy(1.0, &g[j * k..(j + 1) * k], &mut d[r * k..(r + 1) * k]);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::SumAll(parts) => {
                for &p in parts {
                    if let Some(d) = self.slot(grads, p) {
                        d[0] += g[0];
                    }
                }
            }
            Op::Pick(a, k) => {
                if let Some(d) = self.slot(grads, *a) {
                    d[*k] += g[0];
                }
            }
            Op::Normalize(a) => {
                let s: f64 = self.value(*a).iter().sum();
                let gy = dot(g, y);
                if let Some(d) = self.slot(grads, *a) {
                    for k in 0..d.len() {
                        d[k] += (g[k] - gy) / s;
                    }
                }
            }
            Op::Softmax(a) => {
                let gy = dot(g, y);
                if let Some(d) = self.slot(grads, *a) {
                    for k in 0..d.len() {
                        d[k] += y[k] * (g[k] - gy);
                    }
                }
            }
            Op::Scatter(e, idx) => {
                if let Some(d) = self.slot(grads, *e) {
                    for (j, &v) in idx.iter().enumerate() {
                        d[j] += g[v];
                    }
                }
            }
            Op::Kl { q, p, floor } => {
                let (qv, pv) = (self.value(*q), self.value(*p));
                if let Some(d) = self.slot(grads, *q) {
                    for k in 0..d.len() {
                        if qv[k] > 0.0 {
                            d[k] += g[0] * (qv[k].ln() - pv[k].max(*floor).ln() + 1.0);
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *p) {
                    for k in 0..d.len() {
                        if qv[k] > 0.0 && pv[k] > *floor {
                            d[k] -= g[0] * qv[k] / pv[k];
                        }
                    }
                }
            }
        }
    }

    fn unary(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        local: impl Fn(usize) -> f64,
    ) {
        if let Some(d) = self.slot(grads, a) {
            for k in 0..d.len() {
                d[k] += g[k] * local(k);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (d, s) in y.iter_mut().zip(x) {
        *d += alpha * s;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub(crate) fn kl_slice(q: &[f64], p: &[f64], floor: f64) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * (qi.ln() - pi.max(floor).ln()))
        .sum()
}
