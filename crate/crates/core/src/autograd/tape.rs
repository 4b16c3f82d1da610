use std::f64::consts::PI;

use super::gemm::{gemm, View, ViewMut};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
    Combine(Vec<(Var, f64)>),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
    param: Option<usize>,
}

/// Define-by-run reverse-mode tape. Rebuilt for every optimization step.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Result of [`Tape::backward`]: gradients of the loss with respect to every
/// recorded value that requires one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Parameter gradients keyed by the id given to [`Tape::param`], in
    /// insertion order. Parameters that did not participate get zeros.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(move |&(id, node)| self.grads[node].as_ref().map(|g| (id, g)))
    }

    pub fn into_param_grads(mut self) -> Vec<(usize, Tensor)> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .filter_map(|(id, node)| self.grads[node].take().map(|g| (id, g)))
            .collect()
    }
}

const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    let t = (s * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.nodes[var.0].value.get()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an owned constant (or a differentiable input when `requires_grad`).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Record a borrowed parameter tensor under caller-chosen id `id`.
    pub fn param(&mut self, value: &'a Tensor, id: usize, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
        if t.shape().len() != 2 {
            return Err(Error::shape(op, t.shape(), &[0, 0]));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let at = self.value(a);
        let bt = self.value(b);
        let (ar, ac) = Self::matrix_dims(at, "matmul")?;
        let (br, bc) = Self::matrix_dims(bt, "matmul")?;
        let lhs = View::new(at.data(), ar, ac).t_if(ta);
        let rhs = View::new(bt.data(), br, bc).t_if(tb);
        if lhs.cols != rhs.rows {
            return Err(Error::shape(
                "matmul",
                &[lhs.rows, lhs.cols],
                &[rhs.rows, rhs.cols],
            ));
        }
        let (m, n) = (lhs.rows, rhs.cols);
        let mut out = vec![0.0; m * n];
        gemm(1.0, lhs, rhs, 0.0, ViewMut::new(&mut out, m, n));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, ta, tb },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a length-`cols` vector to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(bias));
        let (rows, cols) = Self::matrix_dims(xt, "add_bias")?;
        if bt.shape() != [cols] {
            return Err(Error::shape("add_bias", xt.shape(), bt.shape()));
        }
        let mut data = xt.data().to_vec();
        for r in 0..rows {
            for (o, b) in data[r * cols..(r + 1) * cols].iter_mut().zip(bt.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())
            .expect("shape preserved");
        let rg = self.requires_grad(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| gelu(v)).collect(),
        )
        .expect("shape preserved");
        let rg = self.requires_grad(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v.max(0.0)).collect(),
        )
        .expect("shape preserved");
        let rg = self.requires_grad(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Gathers rows `ids` of a `[rows, dim]` table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, dim) = Self::matrix_dims(t, "embed")?;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::TokenOutOfRange { id, vocab: rows });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        let rg = self.requires_grad(table);
        Ok(self.push(
            value,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = Self::matrix_dims(xt, "layernorm")?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [cols] || b.shape() != [cols] {
            return Err(Error::shape("layernorm", xt.shape(), g.shape()));
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g.data()[c] + b.data()[c];
            }
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention with a causal mask.
    /// `q`, `k`, `v` are `[seq, dim]` with heads laid out as contiguous column blocks.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (seq, dim) = Self::matrix_dims(qt, "attention")?;
        if kt.shape() != qt.shape() || vt.shape() != qt.shape() {
            return Err(Error::shape("attention", qt.shape(), kt.shape()));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "dim {dim} not divisible by {heads} heads"
            )));
        }
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut probs = vec![0.0; heads * seq * seq];
        let mut out = vec![0.0; seq * dim];
        for h in 0..heads {
            let off = h * hd;
            let p = &mut probs[h * seq * seq..(h + 1) * seq * seq];
            gemm(
                scale,
                View::cols_block(qt.data(), seq, dim, off, hd),
                View::cols_block(kt.data(), seq, dim, off, hd).t(),
                0.0,
                ViewMut::new(p, seq, seq),
            );
            for i in 0..seq {
                let row = &mut p[i * seq..(i + 1) * seq];
                let max = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for x in row[..=i].iter_mut() {
                    *x = (*x - max).exp();
                    z += *x;
                }
                for x in row[..=i].iter_mut() {
                    *x /= z;
                }
                for x in row[i + 1..].iter_mut() {
                    *x = 0.0;
                }
            }
            gemm(
                1.0,
                View::new(p, seq, seq),
                View::cols_block(vt.data(), seq, dim, off, hd),
                0.0,
                ViewMut::cols_block(&mut out, seq, dim, off, hd),
            );
        }
        let value = Tensor::new(vec![seq, dim], out)?;
        let rg = self.requires_grad(q) || self.requires_grad(k) || self.requires_grad(v);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean token-level negative log-likelihood over positions whose target is
    /// `Some`. `None` positions are context and contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lt = self.value(logits);
        let (rows, vocab) = Self::matrix_dims(lt, "cross_entropy")?;
        if rows != targets.len() {
            return Err(Error::shape("cross_entropy", lt.shape(), &[targets.len()]));
        }
        let mut probs = vec![0.0; rows * vocab];
        let mut total = 0.0;
        let mut count = 0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= vocab {
                return Err(Error::TokenOutOfRange { id: t, vocab });
            }
            let row = lt.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[r * vocab..(r + 1) * vocab];
            let mut z = 0.0;
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp();
                z += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= z;
            }
            total += z.ln() + max - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::Invalid(
                "cross_entropy: no supervised positions".into(),
            ));
        }
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Weighted sum of scalar values: `Σ wᵢ·xᵢ`.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        let mut rg = false;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("combine", t.shape(), &[]));
            }
            total += w * t.item();
            rg |= self.requires_grad(v);
        }
        Ok(self.push(Tensor::scalar(total), Op::Combine(terms.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of values used more than
    /// once are summed; parameters outside the loss's graph receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, node.value.get(), &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(id) = node.param {
                if node.requires_grad {
                    if grads[idx].is_none() {
                        grads[idx] = Some(Tensor::zeros(node.value.get().shape()));
                    }
                    params.push((id, idx));
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], var: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[var.0].requires_grad {
            return None;
        }
        let shape = self.value(var).shape();
        Some(
            grads[var.0]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut(),
        )
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, n) = (out.shape()[0], out.shape()[1]);
                let a_eff = View::new(at.data(), at.shape()[0], at.shape()[1]).t_if(*ta);
                let b_eff = View::new(bt.data(), bt.shape()[0], bt.shape()[1]).t_if(*tb);
                let dc = View::new(gd, m, n);
                let (a_rows, a_cols) = (at.shape()[0], at.shape()[1]);
                let (b_rows, b_cols) = (bt.shape()[0], bt.shape()[1]);
                if let Some(da) = self.slot(grads, *a) {
                    let dst = ViewMut::new(da, a_rows, a_cols);
                    if *ta {
                        gemm(1.0, b_eff, dc.t(), 1.0, dst);
                    } else {
                        gemm(1.0, dc, b_eff.t(), 1.0, dst);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    let dst = ViewMut::new(db, b_rows, b_cols);
                    if *tb {
                        gemm(1.0, dc.t(), a_eff, 1.0, dst);
                    } else {
                        gemm(1.0, a_eff.t(), dc, 1.0, dst);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(gd).for_each(|(p, q)| *p += q);
                }
                let cols = out.cols();
                if let Some(d) = self.slot(grads, *bias) {
                    for row in gd.chunks(cols) {
                        d.iter_mut().zip(row).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += gd[i] * bv[i];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..d.len() {
                        d[i] += gd[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += gd[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += gd[i];
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                let dim = out.cols();
                if let Some(d) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gd[r * dim..(r + 1) * dim];
                        d[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (rows, cols) = (out.rows(), out.cols());
                let gv = self.value(*gamma).data().to_vec();
                if let Some(d) = self.slot(grads, *gamma) {
                    for i in 0..rows * cols {
                        d[i % cols] += gd[i] * xhat[i];
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for i in 0..rows * cols {
                        d[i % cols] += gd[i];
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    let n = cols as f64;
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let base = r * cols;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..cols {
                            dxhat[c] = gd[base + c] * gv[c];
                            s1 += dxhat[c];
                            s2 += dxhat[c] * xhat[base + c];
                        }
                        for c in 0..cols {
                            d[base + c] += rstd[r] / n * (n * dxhat[c] - s1 - xhat[base + c] * s2);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                self.attention_backward(*q, *k, *v, *heads, probs, gd, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let vocab = self.value(*logits).cols();
                let scale = gd[0] / *count as f64;
                if let Some(d) = self.slot(grads, *logits) {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        let dr = &mut d[r * vocab..(r + 1) * vocab];
                        for (x, &pi) in dr.iter_mut().zip(p) {
                            *x += scale * pi;
                        }
                        dr[t] -= scale;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().for_each(|x| *x += gd[0]);
                }
            }
            Op::Combine(terms) => {
                for &(v, w) in terms {
                    if let Some(d) = self.slot(grads, v) {
                        d[0] += w * gd[0];
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (seq, dim) = (qt.rows(), qt.cols());
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = if self.requires_grad(q) {
            Some(vec![0.0; seq * dim])
        } else {
            None
        };
        let mut dk = if self.requires_grad(k) {
            Some(vec![0.0; seq * dim])
        } else {
            None
        };
        let mut dv = if self.requires_grad(v) {
            Some(vec![0.0; seq * dim])
        } else {
            None
        };
        let mut dp = vec![0.0; seq * seq];
        for h in 0..heads {
            let off = h * hd;
            let p = &probs[h * seq * seq..(h + 1) * seq * seq];
            let d_out = View::cols_block(gd, seq, dim, off, hd);
            if let Some(dv) = dv.as_mut() {
                gemm(
                    1.0,
                    View::new(p, seq, seq).t(),
                    d_out,
                    1.0,
                    ViewMut::cols_block(dv, seq, dim, off, hd),
                );
            }
            if dq.is_none() && dk.is_none() {
                continue;
            }
            gemm(
                1.0,
                d_out,
                View::cols_block(vt.data(), seq, dim, off, hd).t(),
                0.0,
                ViewMut::new(&mut dp, seq, seq),
            );
            // softmax Jacobian, masked entries have zero probability
            for i in 0..seq {
                let pr = &p[i * seq..(i + 1) * seq];
                let dr = &mut dp[i * seq..(i + 1) * seq];
                let dot: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                for j in 0..seq {
                    dr[j] = if j <= i {
                        pr[j] * (dr[j] - dot) * scale
                    } else {
                        0.0
                    };
                }
            }
            if let Some(dq) = dq.as_mut() {
                gemm(
                    1.0,
                    View::new(&dp, seq, seq),
                    View::cols_block(kt.data(), seq, dim, off, hd),
                    1.0,
                    ViewMut::cols_block(dq, seq, dim, off, hd),
                );
            }
            if let Some(dk) = dk.as_mut() {
                gemm(
                    1.0,
                    View::new(&dp, seq, seq).t(),
                    View::cols_block(qt.data(), seq, dim, off, hd),
                    1.0,
                    ViewMut::cols_block(dk, seq, dim, off, hd),
                );
            }
        }
        for (var, local) in [(q, dq), (k, dk), (v, dv)] {
            if let (Some(local), Some(d)) = (local, self.slot(grads, var)) {
                d.iter_mut().zip(&local).for_each(|(x, y)| *x += y);
            }
        }
    }
}
