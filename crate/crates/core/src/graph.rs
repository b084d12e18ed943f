//! Reverse-mode automatic differentiation over a recorded computation graph.
//!
//! A [`Graph`] is an append-only list of nodes. Each operation computes its
//! value eagerly and records how to route gradients back to its inputs, so
//! node ids are already in topological order and [`Graph::backward`] is a
//! single reverse sweep. Gradients reaching a node through several consumers
//! are summed.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    MulConst(Var, Vec<F>),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Unfold {
        x: Var,
        k: usize,
        pad_left: usize,
    },
    SmoothedNll {
        logp: Var,
        targets: Vec<u32>,
        eps: F,
    },
}

struct Node<F> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    tracked: bool,
}

/// Gradients of a scalar with respect to every tracked leaf it depends on,
/// keyed by node id.
#[derive(Clone, Debug, Default)]
pub struct GradientMap<F> {
    grads: BTreeMap<usize, Tensor<F>>,
}

impl<F: Scalar> GradientMap<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(&v.0)
    }

    pub fn remove(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.remove(&v.0)
    }

    pub fn contains(&self, v: Var) -> bool {
        self.grads.contains_key(&v.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<F>)> {
        self.grads.iter().map(|(&k, v)| (Var(k), v))
    }
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dim(op, a, b))
    }
}

fn as_matrix(t: &Tensor<impl Scalar>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: impl Into<Arc<Tensor<F>>>, op: Op<F>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: impl Into<Arc<Tensor<F>>>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: impl Into<Arc<Tensor<F>>>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        tensor::matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::MatMul(a, b), tr))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_bt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![F::zero(); m * n];
        tensor::matmul_bt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::MatMulBt(a, b), tr))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Add(a, b), tr))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Sub(a, b), tr))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Mul(a, b), tr))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = as_matrix(self.value(a));
        if self.value(bias).len() != n {
            return Err(Error::dim("add_row", self.shape(a), self.shape(bias)));
        }
        let va = self.value(a);
        let vb = self.value(bias).data();
        let data = va
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(vb).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(va.shape(), data)?;
        let tr = self.tracked(a) || self.tracked(bias);
        Ok(self.push(t, Op::AddRow(a, bias), tr))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let t = self.value(a).map(|x| x * c);
        let tr = self.tracked(a);
        self.push(t, Op::Scale(a, c), tr)
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor<F>) -> Result<Var> {
        same_shape("mul_const", self.shape(a), c.shape())?;
        let va = self.value(a);
        let data = va.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(va.shape(), data)?;
        let tr = self.tracked(a);
        Ok(self.push(t, Op::MulConst(a, c.into_data()), tr))
    }

    /// Elementwise sum with a constant tensor (attention masks).
    pub fn add_const(&mut self, a: Var, c: &Tensor<F>) -> Result<Var> {
        same_shape("add_const", self.shape(a), c.shape())?;
        let va = self.value(a);
        let data = va.data().iter().zip(c.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape(), data)?;
        let tr = self.tracked(a);
        Ok(self.push(t, Op::AddConst(a), tr))
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let t = self.value(a).map(f);
        let tr = self.tracked(a);
        self.push(t, op, tr)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > F::zero() { x } else { F::zero() }, Op::Relu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut t = Tensor::clone(self.value(a));
        let n = t.cols();
        for row in t.data_mut().chunks_mut(n) {
            tensor::softmax_in_place(row);
        }
        let tr = self.tracked(a);
        self.push(t, Op::Softmax(a), tr)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut t = Tensor::clone(self.value(a));
        let n = t.cols();
        for row in t.data_mut().chunks_mut(n) {
            tensor::log_softmax_in_place(row);
        }
        let tr = self.tracked(a);
        self.push(t, Op::LogSoftmax(a), tr)
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x));
        if n == 0 {
            return Err(Error::contract("layer_norm over an empty axis"));
        }
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let vx = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let nf = F::of(n as f64);
        let mut xhat = vec![F::zero(); m * n];
        let mut rstd = vec![F::zero(); m];
        let mut out = vec![F::zero(); m * n];
        for r in 0..m {
            let row = &vx[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        let tr = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            tr,
        ))
    }

    /// Selects rows of a `[V×d]` table.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = as_matrix(self.value(table));
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(Error::contract(alloc::format!(
                    "row id {id} out of range for table of {v} rows"
                )));
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        let tr = self.tracked(table);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            tr,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(&[m, total], out)?;
        let tr = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), tr))
    }

    /// Columns `start..end` of a 2-D value.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(a));
        if start > end || end > n {
            return Err(Error::contract(alloc::format!("column slice {start}..{end} of {n}")));
        }
        let va = self.value(a);
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&va.row(r)[start..end]);
        }
        let t = Tensor::new(&[m, end - start], out)?;
        let tr = self.tracked(a);
        Ok(self.push(t, Op::SliceCols(a, start), tr))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut m = 0;
        for &p in parts {
            if self.value(p).cols() != n {
                return Err(Error::dim("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            m += self.value(p).rows();
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(&[m, n], out)?;
        let tr = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), tr))
    }

    /// Rows `start..end` of a 2-D value.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(a));
        if start > end || end > m {
            return Err(Error::contract(alloc::format!("row slice {start}..{end} of {m}")));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let t = Tensor::new(&[end - start, n], data)?;
        let tr = self.tracked(a);
        Ok(self.push(t, Op::SliceRows(a, start), tr))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let tr = self.tracked(a);
        Ok(self.push(t, Op::Transpose(a), tr))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::clone(self.value(a)).reshape(shape)?;
        let tr = self.tracked(a);
        Ok(self.push(t, Op::Reshape(a), tr))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<F>();
        let tr = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tr)
    }

    /// Sliding windows of `k` consecutive rows, each flattened into one
    /// output row of width `k·cols`; positions outside the input read as 0.
    pub fn unfold(&mut self, x: Var, k: usize, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (len, s) = as_matrix(self.value(x));
        let padded = len + pad_left + pad_right;
        if k == 0 || padded < k {
            return Err(Error::contract("unfold window longer than padded input"));
        }
        let out_len = padded - k + 1;
        let vx = self.value(x).data();
        let mut out = vec![F::zero(); out_len * k * s];
        for t in 0..out_len {
            for j in 0..k {
                let src = t + j;
                if src < pad_left || src - pad_left >= len {
                    continue;
                }
                let src = src - pad_left;
                out[(t * k + j) * s..(t * k + j + 1) * s].copy_from_slice(&vx[src * s..(src + 1) * s]);
            }
        }
        let t = Tensor::new(&[out_len, k * s], out)?;
        let tr = self.tracked(x);
        Ok(self.push(t, Op::Unfold { x, k, pad_left }, tr))
    }

    /// Summed cross-entropy of `logp: [n×T]` rows against label-smoothed
    /// targets `q = (1−eps)·onehot + eps/T`.
    pub fn smoothed_nll(&mut self, logp: Var, targets: &[u32], eps: F) -> Result<Var> {
        let (n, vocab) = as_matrix(self.value(logp));
        if targets.len() != n {
            return Err(Error::dim("smoothed_nll", self.shape(logp), &[targets.len()]));
        }
        let lp = self.value(logp).data();
        let uniform = eps / F::of(vocab as f64);
        let mut loss = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            let t = t as usize;
            if t >= vocab {
                return Err(Error::contract(alloc::format!(
                    "target id {t} >= vocabulary size {vocab}"
                )));
            }
            let row = &lp[r * vocab..(r + 1) * vocab];
            let mut s = -(F::one() - eps) * row[t];
            if eps != F::zero() {
                s -= uniform * row.iter().copied().sum::<F>();
            }
            loss += s;
        }
        let tr = self.tracked(logp);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedNll {
                logp,
                targets: targets.to_vec(),
                eps,
            },
            tr,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every tracked leaf it
    /// depends on.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = GradientMap::default();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if let Op::Leaf = node.op {
                out.grads.insert(id, Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(val(*a));
                let n = val(*b).cols();
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| tensor::matmul_bt_into(g, bv, s, m, n, k));
                acc(*b, &mut |s| tensor::matmul_at_into(av, g, s, m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = as_matrix(val(*a));
                let n = val(*b).rows();
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| tensor::matmul_into(g, bv, s, m, n, k));
                acc(*b, &mut |s| tensor::matmul_at_into(g, av, s, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                let n = val(*b).len();
                acc(*b, &mut |s| {
                    for row in g.chunks(n) {
                        add_into(s, row);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c)),
            Op::MulConst(a, c) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * c[i];
                }
            }),
            Op::AddConst(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Tanh(a) => {
                let y = out.data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (F::one() - y[i] * y[i]);
                    }
                })
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i] * (F::one() - y[i]);
                    }
                })
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if x[i] > F::zero() {
                            s[i] += g[i];
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let n = out.cols();
                let y = out.data();
                acc(*a, &mut |s| {
                    for ((sr, gr), yr) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            sr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let n = out.cols();
                let y = out.data();
                acc(*a, &mut |s| {
                    for ((sr, gr), yr) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let total: F = gr.iter().copied().sum();
                        for j in 0..n {
                            sr[j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = out.cols();
                let gv = val(*gain).data();
                acc(*x, &mut |s| {
                    let nf = F::of(n as f64);
                    for r in 0..rstd.len() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = F::zero();
                        let mut mean_dh = F::zero();
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= nf;
                        mean_dh /= nf;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            s[r * n + j] += rstd[r] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            s[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for gr in g.chunks(n) {
                        add_into(s, gr);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = out.cols();
                acc(*table, &mut |s| {
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        add_into(&mut s[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |s| {
                        for (r, sr) in s.chunks_mut(w).enumerate() {
                            add_into(sr, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let n = val(*a).cols();
                let w = out.cols();
                acc(*a, &mut |s| {
                    for (r, gr) in g.chunks(w.max(1)).enumerate().take(out.rows()) {
                        add_into(&mut s[r * n + start..r * n + start + w], gr);
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let l = val(p).len();
                    acc(p, &mut |s| add_into(s, &g[offset..offset + l]));
                    offset += l;
                }
            }
            Op::SliceRows(a, start) => {
                let n = out.cols();
                acc(*a, &mut |s| add_into(&mut s[start * n..start * n + g.len()], g))
            }
            Op::Transpose(a) => {
                let (m, n) = as_matrix(val(*a));
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                })
            }
            Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Unfold { x, k, pad_left } => {
                let (len, w) = as_matrix(val(*x));
                let out_len = out.rows();
                acc(*x, &mut |s| {
                    for t in 0..out_len {
                        for j in 0..*k {
                            let src = t + j;
                            if src < *pad_left || src - pad_left >= len {
                                continue;
                            }
                            let src = src - pad_left;
                            let gi = (t * k + j) * w;
                            add_into(&mut s[src * w..(src + 1) * w], &g[gi..gi + w]);
                        }
                    }
                })
            }
            Op::SmoothedNll { logp, targets, eps } => {
                let vocab = val(*logp).cols();
                let uniform = *eps / F::of(vocab as f64);
                acc(*logp, &mut |s| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut s[r * vocab..(r + 1) * vocab];
                        if *eps != F::zero() {
                            row.iter_mut().for_each(|x| *x -= uniform * g[0]);
                        }
                        row[t as usize] -= (F::one() - *eps) * g[0];
                    }
                })
            }
        }
    }
}

#[inline]
fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
