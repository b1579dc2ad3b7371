//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Operations append nodes in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use std::borrow::Cow;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Embedding(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    Normalize(Var, Vec<T>),
    Gelu(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
}

struct Node<'a, T: Clone> {
    op: Op<T>,
    shape: [usize; 2],
    value: Cow<'a, [T]>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// One recorded computation. Parameters are borrowed from a [`ParamStore`],
/// never copied.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    params: Option<&'a ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Graph {
            nodes: Vec::new(),
            params: Some(params),
            param_vars: vec![None; params.len()],
        }
    }

    /// A graph without parameters, for free-standing tensor computations.
    pub fn detached() -> Self {
        Graph {
            nodes: Vec::new(),
            params: None,
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, shape: [usize; 2], value: Vec<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape[0] * shape[1], value.len());
        self.nodes.push(Node {
            op,
            shape,
            value: Cow::Owned(value),
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a copy of `t`; gradients are tracked when `requires_grad`.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let shape = t.shape();
        self.push(Op::Leaf, shape, t.into_data(), requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.input(t, false)
    }

    /// Leaf bound to parameter `id` of the store this graph was built with.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let t = store.get(id);
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape(),
            value: Cow::Borrowed(t.data()),
            requires_grad: true,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shape matches value")
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, k] = self.shape(a);
        let [k2, m] = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); n * m];
        gemm_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), [n, m], out, rg))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, k] = self.shape(a);
        let [m, k2] = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); n * m];
        gemm_nt_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulNT(a, b), [n, m], out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), self.shape(a), out, rg))
    }

    /// `a[n, m] + row[1, m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [n, m] = self.shape(a);
        if self.shape(row) != [1, m] {
            return Err(self.mismatch("add_row", a, row));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(m)
            .flat_map(|ar| ar.iter().zip(r).map(|(x, y)| *x + *y))
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), [n, m], out, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), self.shape(a), out, rg))
    }

    /// `a[n, m] * row[1, m]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [n, m] = self.shape(a);
        if self.shape(row) != [1, m] {
            return Err(self.mismatch("mul_row", a, row));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(m)
            .flat_map(|ar| ar.iter().zip(r).map(|(x, y)| *x * *y))
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::MulRow(a, row), [n, m], out, rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|x| *x * c).collect();
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), self.shape(a), out, rg)
    }

    /// Rows `ids` of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let [v, d] = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Shape {
                op: "embedding",
                left: [v, d],
                right: [bad, 1],
            });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(Op::Embedding(table, ids.to_vec()), [ids.len(), d], out, rg))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let [n, m] = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(m) {
            let max = row.iter().fold(T::neg_infinity(), |acc, &x| acc.max(x));
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let rg = self.rg(a);
        self.push(Op::Softmax(a), [n, m], out, rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let [n, m] = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(m) {
            let max = row.iter().fold(T::neg_infinity(), |acc, &x| acc.max(x));
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(Op::LogSoftmax(a), [n, m], out, rg)
    }

    /// Per-row standardisation to zero mean and unit variance (layer norm
    /// without the affine part).
    pub fn normalize(&mut self, a: Var) -> Var {
        let [n, m] = self.shape(a);
        let mut out = self.value(a).to_vec();
        let mut inv_std = Vec::with_capacity(n);
        let mf = T::of(m as f64);
        for row in out.chunks_mut(m) {
            let mean = row.iter().copied().sum::<T>() / mf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / mf;
            let inv = T::one() / (var + T::of(LN_EPS)).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(Op::Normalize(a, inv_std), [n, m], out, rg)
    }

    /// `normalize(a) * gamma + beta` with `[1, m]` affine rows.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = self.normalize(a);
        let s = self.mul_row(n, gamma)?;
        self.add_row(s, beta)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.rg(a);
        self.push(Op::Gelu(a), self.shape(a), out, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0])[1];
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p)[1] != cols {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += self.shape(p)[0];
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), [rows, cols], out, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        let mut cols = 0;
        for &p in parts {
            if self.shape(p)[0] != rows {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            cols += self.shape(p)[1];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), [rows, cols], out, rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [n, m] = self.shape(a);
        if start + len > m {
            return Err(Error::Shape {
                op: "slice_cols",
                left: [n, m],
                right: [start, len],
            });
        }
        let out = self
            .value(a)
            .chunks(m)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols(a, start), [n, len], out, rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..start + len).collect();
        self.gather_rows(a, &rows)
    }

    /// Rows `idx` of `a`, in the given order (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let [n, m] = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: [n, m],
                right: [bad, 1],
            });
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            out.extend_from_slice(&v[i * m..(i + 1) * m]);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::GatherRows(a, idx.to_vec()), [idx.len(), m], out, rg))
    }

    /// `out[i] = a[i, idx[i]]`, shape `[n, 1]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let [n, m] = self.shape(a);
        if idx.len() != n || idx.iter().any(|&j| j >= m) {
            return Err(Error::Shape {
                op: "pick",
                left: [n, m],
                right: [idx.len(), 1],
            });
        }
        let v = self.value(a);
        let out = idx.iter().enumerate().map(|(i, &j)| v[i * m + j]).collect();
        let rg = self.rg(a);
        Ok(self.push(Op::Pick(a, idx.to_vec()), [n, 1], out, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), [1, 1], vec![s], rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let mut params = Vec::new();
        let mut leaves = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                match node.param {
                    Some(id) => params.push((id, Tensor::new(node.shape, g)?)),
                    None => leaves.push((Var(i), g)),
                }
            }
        }
        Ok(Gradients { params, leaves })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let [n, m] = node.shape;
        let acc = |v: Var, grads: &mut [Option<Vec<T>>], f: &dyn Fn(&mut [T])| {
            if self.nodes[v.0].requires_grad {
                let len = self.nodes[v.0].value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let k = self.shape(*a)[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, grads, &|ga| gemm_nt_acc(g, bv, ga, n, m, k));
                acc(*b, grads, &|gb| gemm_tn_acc(av, g, gb, n, k, m));
            }
            Op::MatMulNT(a, b) => {
                // out[n, m] = a[n, k] b[m, k]^T
                let k = self.shape(*a)[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, grads, &|ga| gemm_acc(g, bv, ga, n, m, k));
                acc(*b, grads, &|gb| gemm_tn_acc(g, av, gb, n, m, k));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, grads, &|gv| add_into(gv, g));
                }
            }
            Op::AddRow(a, r) => {
                acc(*a, grads, &|ga| add_into(ga, g));
                acc(*r, grads, &|gr| {
                    for row in g.chunks(m) {
                        add_into(gr, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, grads, &|ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *x += *gi * *bi;
                    }
                });
                acc(*b, grads, &|gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *x += *gi * *ai;
                    }
                });
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                acc(*a, grads, &|ga| {
                    for (grow, garow) in g.chunks(m).zip(ga.chunks_mut(m)) {
                        for ((x, gi), ri) in garow.iter_mut().zip(grow).zip(rv.iter()) {
                            *x += *gi * *ri;
                        }
                    }
                });
                acc(*r, grads, &|gr| {
                    for (grow, arow) in g.chunks(m).zip(av.chunks(m)) {
                        for ((x, gi), ai) in gr.iter_mut().zip(grow).zip(arow) {
                            *x += *gi * *ai;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, grads, &|ga| {
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += *gi * *c;
                    }
                });
            }
            Op::Embedding(table, ids) => {
                acc(*table, grads, &|gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * m..(id + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                acc(*a, grads, &|ga| {
                    for ((grow, yrow), garow) in g.chunks(m).zip(y.chunks(m)).zip(ga.chunks_mut(m)) {
                        let dot: T = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum();
                        for ((x, gi), yi) in garow.iter_mut().zip(grow).zip(yrow) {
                            *x += *yi * (*gi - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                acc(*a, grads, &|ga| {
                    for ((grow, yrow), garow) in g.chunks(m).zip(y.chunks(m)).zip(ga.chunks_mut(m)) {
                        let total: T = grow.iter().copied().sum();
                        for ((x, gi), yi) in garow.iter_mut().zip(grow).zip(yrow) {
                            *x += *gi - yi.exp() * total;
                        }
                    }
                });
            }
            Op::Normalize(a, inv_std) => {
                let y = &node.value;
                let mf = T::of(m as f64);
                acc(*a, grads, &|ga| {
                    for (r, ((grow, yrow), garow)) in
                        g.chunks(m).zip(y.chunks(m)).zip(ga.chunks_mut(m)).enumerate()
                    {
                        let mean_g = grow.iter().copied().sum::<T>() / mf;
                        let mean_gy = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum::<T>() / mf;
                        for ((x, gi), yi) in garow.iter_mut().zip(grow).zip(yrow) {
                            *x += inv_std[r] * (*gi - mean_g - *yi * mean_gy);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                acc(*a, grads, &|ga| {
                    for ((x, gi), ai) in ga.iter_mut().zip(g).zip(av.iter()) {
                        *x += *gi * gelu_grad(*ai);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(p, grads, &|gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    acc(p, grads, &|gp| {
                        for r in 0..n {
                            add_into(&mut gp[r * c..(r + 1) * c], &g[r * m + col..r * m + col + c]);
                        }
                    });
                    col += c;
                }
            }
            Op::SliceCols(a, start) => {
                let full = self.shape(*a)[1];
                acc(*a, grads, &|ga| {
                    for r in 0..n {
                        add_into(&mut ga[r * full + start..r * full + start + m], &g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                acc(*a, grads, &|ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut ga[src * m..(src + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::Pick(a, idx) => {
                let cols = self.shape(*a)[1];
                acc(*a, grads, &|ga| {
                    for (r, &j) in idx.iter().enumerate() {
                        ga[r * cols + j] += g[r];
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, grads, &|ga| {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    params: Vec<(ParamId, Tensor<T>)>,
    leaves: Vec<(Var, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a non-parameter leaf created by [`Graph::input`].
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.iter().find(|(x, _)| *x == v).map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
    }
}
