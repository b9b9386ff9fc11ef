//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are appended in evaluation order, so a single reverse sweep in
//! [`Graph::backward`] visits each node after all of its consumers. Values
//! are computed eagerly; no op is ever re-evaluated.

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MaskMul(Var, Vec<f64>),
    Blend { new: Var, old: Var, keep_new: Vec<bool> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gather { table: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    Conv1d { x: Var, kernel: Var, bias: Var },
    Pool { x: Var, argmax: Vec<usize> },
    StackRows { parts: Vec<Var>, src: Vec<(usize, usize)> },
    Reshape(Var),
    MaskedSoftmax { x: Var, lens: Vec<usize> },
    WeightedRowSum { alpha: Var, states: Var },
    Bce { p: Var, y: Vec<f64> },
    Dot(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Clamp applied to probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; n * m];
        gemm_acc(ta.data(), tb.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Adds `b` (length = trailing axis of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.len() != ta.cols() {
            return Err(shape_err("add_row", ta, tb));
        }
        let m = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::AddRow(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, self.ng(a) || self.ng(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ng) = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ng) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ng) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// Elementwise product of every row of `a` with vector `v`.
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        if tv.len() != ta.cols() {
            return Err(shape_err("mul_row", ta, tv));
        }
        let m = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, &s) in row.iter_mut().zip(tv.data()) {
                *o *= s;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(v);
        Ok(self.push(value, Op::MulRow(a, v), ng))
    }

    /// Multiplies by a constant mask of the same size (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::Shape {
                op: "mask_mul",
                left: ta.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::MaskMul(a, mask), ng))
    }

    /// Row-wise select: row `r` comes from `new` when `keep_new[r]`, else from `old`.
    pub fn blend_rows(&mut self, new: Var, old: Var, keep_new: Vec<bool>) -> Result<Var> {
        let (tn, to) = (self.value(new), self.value(old));
        if tn.shape() != to.shape() || keep_new.len() != tn.rows() {
            return Err(shape_err("blend_rows", tn, to));
        }
        let m = tn.cols();
        let mut out = Vec::with_capacity(tn.len());
        for (r, &k) in keep_new.iter().enumerate() {
            let src = if k { tn } else { to };
            out.extend_from_slice(&src.data()[r * m..(r + 1) * m]);
        }
        let value = Tensor::new(tn.shape().to_vec(), out)?;
        let ng = self.ng(new) || self.ng(old);
        Ok(self.push(value, Op::Blend { new, old, keep_new }, ng))
    }

    fn map(&mut self, a: Var, f: fn(f64) -> f64) -> (Tensor, bool) {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        (Tensor::new(ta.shape().to_vec(), data).expect("same size"), self.ng(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (v, ng) = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (v, ng) = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (v, ng) = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a), ng)
    }

    /// Row lookup: `out[i] = table[idx[i]]`.
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = (tt.rows(), tt.cols());
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            if i >= v {
                return Err(Error::Input(format!("index {i} out of range for table of {v} rows")));
            }
            out.extend_from_slice(tt.row(i));
        }
        let value = Tensor::new(vec![idx.len(), d], out)?;
        let ng = self.ng(table);
        Ok(self.push(value, Op::Gather { table, idx }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows || self.value(p).shape().len() != 2 {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Valid 1-D cross-correlation with stride 1.
    /// `x: [B, L, Cin]`, `kernel: [K, Cin, Cout]`, `bias: [Cout]` → `[B, L-K+1, Cout]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        if tx.shape().len() != 3 || tk.shape().len() != 3 || tx.shape()[2] != tk.shape()[1] {
            return Err(shape_err("conv1d", tx, tk));
        }
        let (b, l, cin) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (k, cout) = (tk.shape()[0], tk.shape()[2]);
        if tb.len() != cout {
            return Err(shape_err("conv1d", tk, tb));
        }
        if l < k {
            return Err(Error::Input(format!(
                "conv1d: sequence length {l} is shorter than kernel {k}"
            )));
        }
        let lo = l - k + 1;
        let mut out = Vec::with_capacity(b * lo * cout);
        for _ in 0..b * lo {
            out.extend_from_slice(tb.data());
        }
        for bi in 0..b {
            for j in 0..k {
                // rows t..t+lo of the input, shifted by j, times kernel slice j
                let xs = &tx.data()[(bi * l + j) * cin..(bi * l + j + lo) * cin];
                let ks = &tk.data()[j * cin * cout..(j + 1) * cin * cout];
                let os = &mut out[bi * lo * cout..(bi + 1) * lo * cout];
                gemm_acc(xs, ks, os, lo, cin, cout);
            }
        }
        let value = Tensor::new(vec![b, lo, cout], out)?;
        let ng = self.ng(x) || self.ng(kernel) || self.ng(bias);
        Ok(self.push(value, Op::Conv1d { x, kernel, bias }, ng))
    }

    /// Windowed max over the time axis of `[B, L, C]`. Ties go to the lowest index.
    pub fn maxpool1d(&mut self, x: Var, pool: usize, stride: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 3 || pool == 0 || stride == 0 || tx.shape()[1] < pool {
            return Err(Error::Input(format!(
                "maxpool1d: input {:?} with pool {pool}, stride {stride}",
                tx.shape()
            )));
        }
        let (b, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let lo = (l - pool) / stride + 1;
        let mut out = Vec::with_capacity(b * lo * c);
        let mut argmax = Vec::with_capacity(b * lo * c);
        for bi in 0..b {
            for t in 0..lo {
                for ch in 0..c {
                    let mut best = (bi * l + t * stride) * c + ch;
                    for w in 1..pool {
                        let i = (bi * l + t * stride + w) * c + ch;
                        if tx.data()[i] > tx.data()[best] {
                            best = i;
                        }
                    }
                    out.push(tx.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![b, lo, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Pool { x, argmax }, ng))
    }

    /// Per-channel max over the first `valid[b]` time steps of `[B, L, C]` → `[B, C]`.
    pub fn global_maxpool(&mut self, x: Var, valid: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 3 || valid.len() != tx.shape()[0] {
            return Err(Error::Input(format!(
                "global_maxpool: input {:?} with {} lengths",
                tx.shape(),
                valid.len()
            )));
        }
        let (b, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let mut out = Vec::with_capacity(b * c);
        let mut argmax = Vec::with_capacity(b * c);
        #[allow(clippy::needless_range_loop)]
        for bi in 0..b {
            let n = valid[bi].clamp(1, l);
            for ch in 0..c {
                let mut best = bi * l * c + ch;
                for t in 1..n {
                    let i = (bi * l + t) * c + ch;
                    if tx.data()[i] > tx.data()[best] {
                        best = i;
                    }
                }
                out.push(tx.data()[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![b, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Pool { x, argmax }, ng))
    }

    /// Builds a matrix whose row `r` is row `src[r].1` of `parts[src[r].0]`.
    pub fn stack_rows(&mut self, parts: &[Var], src: Vec<(usize, usize)>) -> Result<Var> {
        let h = self.value(parts[0]).cols();
        let mut out = Vec::with_capacity(src.len() * h);
        for &(p, r) in &src {
            let t = self.value(
                *parts
                    .get(p)
                    .ok_or_else(|| Error::Input("stack_rows: part index".into()))?,
            );
            if t.cols() != h || r >= t.rows() {
                return Err(shape_err("stack_rows", self.value(parts[0]), t));
            }
            out.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![src.len(), h], out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            value,
            Op::StackRows {
                parts: parts.to_vec(),
                src,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Row-wise softmax over the first `lens[b]` columns of `[B, T]`; the rest get 0.
    pub fn masked_softmax(&mut self, x: Var, lens: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || lens.len() != tx.rows() {
            return Err(Error::Input(format!(
                "masked_softmax: input {:?} with {} lengths",
                tx.shape(),
                lens.len()
            )));
        }
        let t = tx.cols();
        let mut out = vec![0.0; tx.len()];
        for (b, &n) in lens.iter().enumerate() {
            if n == 0 || n > t {
                return Err(Error::Input(format!(
                    "masked_softmax: valid length {n} outside 1..={t}"
                )));
            }
            let row = &tx.data()[b * t..b * t + n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[b * t..b * t + n];
            let mut sum = 0.0;
            for (oi, &xi) in o.iter_mut().zip(row) {
                *oi = (xi - mx).exp();
                sum += *oi;
            }
            o.iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::MaskedSoftmax { x, lens }, ng))
    }

    /// `out[b] = Σ_t alpha[b,t] · states[b·T + t]` for `alpha: [B, T]`, `states: [B·T, H]`.
    pub fn weighted_row_sum(&mut self, alpha: Var, states: Var) -> Result<Var> {
        let (ta, ts) = (self.value(alpha), self.value(states));
        if ta.shape().len() != 2 || ts.rows() != ta.len() {
            return Err(shape_err("weighted_row_sum", ta, ts));
        }
        let (b, t, h) = (ta.rows(), ta.cols(), ts.cols());
        let mut out = vec![0.0; b * h];
        for bi in 0..b {
            let o = &mut out[bi * h..(bi + 1) * h];
            for ti in 0..t {
                let a = ta.data()[bi * t + ti];
                if a == 0.0 {
                    continue;
                }
                for (ov, sv) in o.iter_mut().zip(ts.row(bi * t + ti)) {
                    *ov += a * sv;
                }
            }
        }
        let value = Tensor::new(vec![b, h], out)?;
        let ng = self.ng(alpha) || self.ng(states);
        Ok(self.push(value, Op::WeightedRowSum { alpha, states }, ng))
    }

    /// Mean binary cross-entropy of probabilities `p` (one per example) against `y`.
    pub fn bce(&mut self, p: Var, y: &[f64]) -> Result<Var> {
        let tp = self.value(p);
        if tp.len() != y.len() || y.is_empty() {
            return Err(Error::Shape {
                op: "bce",
                left: tp.shape().to_vec(),
                right: vec![y.len()],
            });
        }
        let loss = tp.data().iter().zip(y).map(|(&p, &y)| bce_value(p, y)).sum::<f64>() / y.len() as f64;
        let ng = self.ng(p);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, y: y.to_vec() }, ng))
    }

    /// Scalar `Σ x_i w_i` for a constant weight vector.
    pub fn dot_const(&mut self, x: Var, w: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != w.len() {
            return Err(Error::Shape {
                op: "dot_const",
                left: tx.shape().to_vec(),
                right: vec![w.len()],
            });
        }
        let s = tx.data().iter().zip(&w).map(|(a, b)| a * b).sum();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Dot(x, w), ng))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.len()]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].needs_grad {
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |g| gemm_nt_acc(dy, tb.data(), g, n, k, m));
                acc(*b, &mut |g| gemm_tn_acc(ta.data(), dy, g, n, k, m));
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                let m = val(*b).len();
                acc(*b, &mut |g| {
                    for row in dy.chunks(m) {
                        add_into(g, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(gi, d)| *gi -= d));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((gi, d), y) in g.iter_mut().zip(dy).zip(tb.data()) {
                        *gi += d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, d), x) in g.iter_mut().zip(dy).zip(ta.data()) {
                        *gi += d * x;
                    }
                });
            }
            Op::MulRow(a, v) => {
                let (ta, tv) = (val(*a), val(*v));
                let m = tv.len();
                acc(*a, &mut |g| {
                    for (gr, dr) in g.chunks_mut(m).zip(dy.chunks(m)) {
                        for ((gi, d), s) in gr.iter_mut().zip(dr).zip(tv.data()) {
                            *gi += d * s;
                        }
                    }
                });
                acc(*v, &mut |g| {
                    for (dr, ar) in dy.chunks(m).zip(ta.data().chunks(m)) {
                        for ((gi, d), x) in g.iter_mut().zip(dr).zip(ar) {
                            *gi += d * x;
                        }
                    }
                });
            }
            Op::MaskMul(a, mask) => acc(*a, &mut |g| {
                for ((gi, d), m) in g.iter_mut().zip(dy).zip(mask) {
                    *gi += d * m;
                }
            }),
            Op::Blend { new, old, keep_new } => {
                let m = val(*new).cols();
                for (which, want) in [(*new, true), (*old, false)] {
                    acc(which, &mut |g| {
                        for (r, &k) in keep_new.iter().enumerate() {
                            if k == want {
                                add_into(&mut g[r * m..(r + 1) * m], &dy[r * m..(r + 1) * m]);
                            }
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for ((gi, d), s) in g.iter_mut().zip(dy).zip(y) {
                        *gi += d * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for ((gi, d), t) in g.iter_mut().zip(dy).zip(y) {
                        *gi += d * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |g| {
                    for ((gi, d), xi) in g.iter_mut().zip(dy).zip(x) {
                        if *xi > 0.0 {
                            *gi += d;
                        }
                    }
                });
            }
            Op::Gather { table, idx } => {
                let d = val(*table).cols();
                acc(*table, &mut |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut g[i * d..(i + 1) * d], &dy[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = val(p).cols();
                    acc(p, &mut |g| {
                        for (gr, dr) in g.chunks_mut(c).zip(dy.chunks(total)) {
                            add_into(gr, &dr[off..off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let (tx, tk) = (val(*x), val(*kernel));
                let (b, l, cin) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (k, cout) = (tk.shape()[0], tk.shape()[2]);
                let lo = l - k + 1;
                acc(*bias, &mut |g| {
                    for row in dy.chunks(cout) {
                        add_into(g, row);
                    }
                });
                acc(*x, &mut |g| {
                    for bi in 0..b {
                        let ds = &dy[bi * lo * cout..(bi + 1) * lo * cout];
                        for j in 0..k {
                            let ks = &tk.data()[j * cin * cout..(j + 1) * cin * cout];
                            let gs = &mut g[(bi * l + j) * cin..(bi * l + j + lo) * cin];
                            gemm_nt_acc(ds, ks, gs, lo, cin, cout);
                        }
                    }
                });
                acc(*kernel, &mut |g| {
                    for bi in 0..b {
                        let ds = &dy[bi * lo * cout..(bi + 1) * lo * cout];
                        for j in 0..k {
                            let xs = &tx.data()[(bi * l + j) * cin..(bi * l + j + lo) * cin];
                            let gs = &mut g[j * cin * cout..(j + 1) * cin * cout];
                            gemm_tn_acc(xs, ds, gs, lo, cin, cout);
                        }
                    }
                });
            }
            Op::Pool { x, argmax } => acc(*x, &mut |g| {
                for (&i, d) in argmax.iter().zip(dy) {
                    g[i] += d;
                }
            }),
            Op::StackRows { parts, src } => {
                let h = node.value.cols();
                for (pi, &p) in parts.iter().enumerate() {
                    acc(p, &mut |g| {
                        for (r, &(sp, sr)) in src.iter().enumerate() {
                            if sp == pi {
                                add_into(&mut g[sr * h..(sr + 1) * h], &dy[r * h..(r + 1) * h]);
                            }
                        }
                    });
                }
            }
            Op::Reshape(a) => acc(*a, &mut |g| add_into(g, dy)),
            Op::MaskedSoftmax { x, lens } => {
                let y = node.value.data();
                let t = node.value.cols();
                acc(*x, &mut |g| {
                    for (b, &n) in lens.iter().enumerate() {
                        let ys = &y[b * t..b * t + n];
                        let ds = &dy[b * t..b * t + n];
                        let s: f64 = ys.iter().zip(ds).map(|(a, c)| a * c).sum();
                        for ((gi, yi), di) in g[b * t..b * t + n].iter_mut().zip(ys).zip(ds) {
                            *gi += yi * (di - s);
                        }
                    }
                });
            }
            Op::WeightedRowSum { alpha, states } => {
                let (ta, ts) = (val(*alpha), val(*states));
                let (b, t, h) = (ta.rows(), ta.cols(), ts.cols());
                acc(*alpha, &mut |g| {
                    for bi in 0..b {
                        let d = &dy[bi * h..(bi + 1) * h];
                        for ti in 0..t {
                            g[bi * t + ti] += d.iter().zip(ts.row(bi * t + ti)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*states, &mut |g| {
                    for bi in 0..b {
                        let d = &dy[bi * h..(bi + 1) * h];
                        for ti in 0..t {
                            let a = ta.data()[bi * t + ti];
                            for (gi, di) in g[(bi * t + ti) * h..(bi * t + ti + 1) * h].iter_mut().zip(d) {
                                *gi += a * di;
                            }
                        }
                    }
                });
            }
            Op::Bce { p, y } => {
                let tp = val(*p);
                let n = y.len() as f64;
                acc(*p, &mut |g| {
                    for ((gi, &pi), &yi) in g.iter_mut().zip(tp.data()).zip(y) {
                        *gi += dy[0] * bce_grad(pi, yi) / n;
                    }
                });
            }
            Op::Dot(x, w) => acc(*x, &mut |g| {
                for (gi, wi) in g.iter_mut().zip(w) {
                    *gi += dy[0] * wi;
                }
            }),
        }
    }
}

fn add_into(g: &mut [f64], d: &[f64]) {
    for (gi, di) in g.iter_mut().zip(d) {
        *gi += di;
    }
}

/// Clamped binary cross-entropy for a single prediction.
pub fn bce_value(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d(bce)/dp; zero where the clamp is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        0.0
    } else {
        -y / p + (1.0 - y) / (1.0 - p)
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if nothing downstream depended on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
