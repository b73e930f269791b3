//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward op as a node holding its value and the
//! handles of its inputs. [`Graph::backward`] walks the tape in reverse and
//! accumulates vector-Jacobian products into per-node gradient buffers.

use super::params::ParamStore;
use super::tensor::{matmul_at, matmul_bt, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Concat(Vec<Var>),
    SliceLast { src: Var, start: usize },
    SqNorm(Var),
    Gather { src: Var, ids: Vec<usize> },
    MulConst { src: Var, factor: Vec<f64> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Which operand of a broadcasting binary op carries the leading dims.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    RightSuffix,
    LeftSuffix,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        Ok(Broadcast::Same)
    } else if sb.len() < sa.len() && sa.ends_with(sb) {
        Ok(Broadcast::RightSuffix)
    } else if sa.len() < sb.len() && sb.ends_with(sa) {
        Ok(Broadcast::LeftSuffix)
    } else {
        Err(Error::Shape {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match kind {
        Broadcast::Same => {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        }
        Broadcast::RightSuffix => {
            let n = b.len();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % n]))
                .collect();
            Tensor::new(a.shape().to_vec(), data).expect("left shape")
        }
        Broadcast::LeftSuffix => {
            let n = a.len();
            let data = b
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| f(a.data()[i % n], y))
                .collect();
            Tensor::new(b.shape().to_vec(), data).expect("right shape")
        }
    }
}

/// Folds a full-size gradient back onto an operand that was broadcast.
fn reduce_to(grad: &[f64], len: usize) -> Vec<f64> {
    if grad.len() == len {
        return grad.to_vec();
    }
    let mut out = vec![0.0; len];
    for (i, g) in grad.iter().enumerate() {
        out[i % len] += g;
    }
    out
}

fn softmax_rows(x: &Tensor) -> Vec<f64> {
    let c = x.last_dim();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Vec<f64> {
    let c = x.last_dim();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            let name = format!("{op:?}");
            let name = name.split(['(', ' ']).next().unwrap_or("op").to_string();
            return Err(Error::numeric(format!("non-finite value produced by {name}")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input that is not a stored parameter (e.g. a latent).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            param: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a named parameter of `store`. Gradients flow back to the
    /// store through [`Graph::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?
            .clone();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            param: Some(name.to_string()),
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Like [`Graph::param`] but the leaf is a constant: no gradient is kept.
    pub fn frozen_param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?
            .clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let kind = broadcast_kind(op, self.value(a), self.value(b))?;
        Ok(zip_broadcast(self.value(a), self.value(b), kind, f))
    }

    /// Elementwise sum; the lower-rank operand broadcasts over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.map(a, |x| x * c);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.map(a, |x| x + c);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, 1.0)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::exp);
        let rg = self.rg(a);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let t = self.map(a, f64::ln);
        let rg = self.rg(a);
        self.push(t, Op::Log(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sums over the last axis: `(.., n) -> (..)`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        let data: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let shape = match t.shape() {
            [] | [_] => Vec::new(),
            s => s[..s.len() - 1].to_vec(),
        };
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data)?, Op::SumLast(a), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), softmax_rows(t))?;
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), log_softmax_rows(t))?;
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Row lookup into a `(V, e)` table, giving `(ids.len(), e)`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op: "embedding",
                left: t.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        let (v, e) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        if ids.is_empty() {
            return Err(Error::contract("embedding lookup needs at least one id"));
        }
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::new(vec![ids.len(), e], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.value(*first).shape();
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.shape(*first).to_vec(),
                    right: s.to_vec(),
                });
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        let c = t.last_dim();
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_last",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for row in t.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = len;
        let rg = self.rg(src);
        self.push(Tensor::new(shape, data)?, Op::SliceLast { src, start }, rg)
    }

    /// Sum of squares of all entries.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SqNorm(a), rg)
    }

    /// Picks `src[r, ids[r]]` from each row of a `(B, V)` tensor.
    pub fn gather(&mut self, src: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let c = t.last_dim();
        if t.shape().len() != 2 || t.rows() != ids.len() {
            return Err(Error::Shape {
                op: "gather",
                left: t.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= c) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of {c}"
            )));
        }
        let data = ids.iter().enumerate().map(|(r, &i)| t.row(r)[i]).collect();
        let rg = self.rg(src);
        self.push(
            Tensor::new(vec![ids.len()], data)?,
            Op::Gather {
                src,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Elementwise product with a constant of identical shape (masks, weights).
    pub fn mul_const(&mut self, src: Var, factor: &[f64]) -> Result<Var> {
        let t = self.value(src);
        if t.len() != factor.len() {
            return Err(Error::Shape {
                op: "mul_const",
                left: t.shape().to_vec(),
                right: vec![factor.len()],
            });
        }
        let data = t.data().iter().zip(factor).map(|(x, f)| x * f).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(src);
        self.push(
            out,
            Op::MulConst {
                src,
                factor: factor.to_vec(),
            },
            rg,
        )
    }

    pub fn reshape(&mut self, src: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(src).clone().reshape(shape)?;
        let rg = self.rg(src);
        self.push(t, Op::Reshape(src), rg)
    }

    // ── backward ────────────────────────────────────────────────────────

    fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        match &mut grads[v.0] {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Accumulates `d loss / d node` into every differentiable ancestor.
    /// Calling it again without [`Graph::zero_grad`] adds to existing grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        // Gradients of this pass live in a scratch buffer and are added at the end,
        // so intermediate nodes never see stale values from earlier passes.
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[idx].requires_grad {
                    Self::acc(&mut self.grads, Var(idx), &g);
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    Self::acc(grads, *a, &matmul_bt(g, tb.data(), m, n, k));
                }
                if self.rg(*b) {
                    Self::acc(grads, *b, &matmul_at(ta.data(), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    Self::acc(grads, *a, &reduce_to(g, self.value(*a).len()));
                }
                if self.rg(*b) {
                    Self::acc(grads, *b, &reduce_to(g, self.value(*b).len()));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    Self::acc(grads, *a, &reduce_to(g, self.value(*a).len()));
                }
                if self.rg(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    Self::acc(grads, *b, &reduce_to(&neg, self.value(*b).len()));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (na, nb) = (ta.len(), tb.len());
                if self.rg(*a) {
                    let full: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * tb.data()[i % nb])
                        .collect();
                    Self::acc(grads, *a, &reduce_to(&full, na));
                }
                if self.rg(*b) {
                    let full: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * ta.data()[i % na])
                        .collect();
                    Self::acc(grads, *b, &reduce_to(&full, nb));
                }
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|x| x * c).collect();
                Self::acc(grads, *a, &d);
            }
            Op::AddScalar(a) | Op::Reshape(a) => Self::acc(grads, *a, g),
            Op::Tanh(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                Self::acc(grads, *a, &d);
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, &i)| if i > 0.0 { *x } else { 0.0 })
                    .collect();
                Self::acc(grads, *a, &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                Self::acc(grads, *a, &d);
            }
            Op::Exp(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * y).collect();
                Self::acc(grads, *a, &d);
            }
            Op::Log(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, i)| x / i)
                    .collect();
                Self::acc(grads, *a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.value(*a).len()];
                Self::acc(grads, *a, &d);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let d = vec![g[0] / n as f64; n];
                Self::acc(grads, *a, &d);
            }
            Op::SumLast(a) => {
                let c = self.value(*a).last_dim();
                let d: Vec<f64> = g.iter().flat_map(|&x| std::iter::repeat_n(x, c)).collect();
                Self::acc(grads, *a, &d);
            }
            Op::Softmax(a) => {
                let c = node.value.last_dim();
                let mut d = Vec::with_capacity(out.len());
                for (gr, yr) in g.chunks(c).zip(out.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    d.extend(gr.iter().zip(yr).map(|(x, y)| y * (x - dot)));
                }
                Self::acc(grads, *a, &d);
            }
            Op::LogSoftmax(a) => {
                let c = node.value.last_dim();
                let mut d = Vec::with_capacity(out.len());
                for (gr, yr) in g.chunks(c).zip(out.chunks(c)) {
                    let total: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(yr).map(|(x, y)| x - y.exp() * total));
                }
                Self::acc(grads, *a, &d);
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let e = t.last_dim();
                let mut d = vec![0.0; t.len()];
                for (r, &i) in ids.iter().enumerate() {
                    for (dst, src) in d[i * e..(i + 1) * e].iter_mut().zip(&g[r * e..(r + 1) * e]) {
                        *dst += src;
                    }
                }
                Self::acc(grads, *table, &d);
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        Self::acc(grads, p, &d);
                    }
                    offset += w;
                }
            }
            Op::SliceLast { src, start } => {
                let t = self.value(*src);
                let c = t.last_dim();
                let w = node.value.last_dim();
                let mut d = vec![0.0; t.len()];
                for (r, gr) in g.chunks(w).enumerate() {
                    d[r * c + start..r * c + start + w].copy_from_slice(gr);
                }
                Self::acc(grads, *src, &d);
            }
            Op::SqNorm(a) => {
                let d: Vec<f64> = self.value(*a).data().iter().map(|x| 2.0 * x * g[0]).collect();
                Self::acc(grads, *a, &d);
            }
            Op::Gather { src, ids } => {
                let t = self.value(*src);
                let c = t.last_dim();
                let mut d = vec![0.0; t.len()];
                for (r, &i) in ids.iter().enumerate() {
                    d[r * c + i] = g[r];
                }
                Self::acc(grads, *src, &d);
            }
            Op::MulConst { src, factor } => {
                let d: Vec<f64> = g.iter().zip(factor).map(|(x, f)| x * f).collect();
                Self::acc(grads, *src, &d);
            }
        }
    }

    /// Adds the gradients of every parameter-bound leaf into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Some(name), Some(g)) = (&node.param, grad) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}
