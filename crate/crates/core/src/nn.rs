//! Neural building blocks shared by the three model families, expressed as
//! compositions of [`Graph`] operations so every block is differentiable.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive attention-mask value standing in for −∞.
pub const MASK_VALUE: f64 = -1e9;

/// `x·W (+ b)` for `x: [n×in]`, `W: [in×out]`.
pub fn linear<F: Scalar>(g: &mut Graph<F>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add_row(y, b),
        None => Ok(y),
    }
}

/// Gate weights of one LSTM cell. Columns of `w_x`, `w_h` and `b` are laid
/// out as `[input | forget | candidate | output]`, each `hidden` wide.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// One LSTM step on row vectors `x: [1×in]`, `h_prev, c_prev: [1×hidden]`.
pub fn lstm_cell<F: Scalar>(g: &mut Graph<F>, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let hidden = g.value(h_prev).cols();
    if g.value(c_prev).cols() != hidden || g.value(w.w_h).shape() != [hidden, 4 * hidden] {
        return Err(Error::dim("lstm_cell", g.shape(h_prev), g.shape(w.w_h)));
    }
    let zx = g.matmul(x, w.w_x)?;
    let zh = g.matmul(h_prev, w.w_h)?;
    let z = g.add(zx, zh)?;
    let z = g.add_row(z, w.b)?;
    lstm_gates(g, z, c_prev)
}

/// LSTM update from the summed gate pre-activations `z: [1×4·hidden]`.
pub fn lstm_gates<F: Scalar>(g: &mut Graph<F>, z: Var, c_prev: Var) -> Result<(Var, Var)> {
    let hidden = g.value(c_prev).cols();
    if g.value(z).cols() != 4 * hidden {
        return Err(Error::dim("lstm_gates", g.shape(z), g.shape(c_prev)));
    }
    let i = g.slice_cols(z, 0, hidden)?;
    let f = g.slice_cols(z, hidden, 2 * hidden)?;
    let cand = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let o = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k−1)/2` zeros on both sides; `k` must be odd.
    Symmetric,
    /// `k−1` zeros on the left only, so output `j` sees inputs `≤ j`.
    Causal,
}

/// 1-D convolution of `x: [len×s_in]` with `kernel: [2s×(k·s_in)]` and
/// `bias: [2s]`, giving `[len×2s]`.
pub fn conv1d<F: Scalar>(g: &mut Graph<F>, x: Var, kernel: Var, bias: Var, k: usize, padding: Padding) -> Result<Var> {
    let s_in = g.value(x).cols();
    let ks = g.shape(kernel);
    if ks.len() != 2 || ks[1] != k * s_in {
        return Err(Error::dim("conv1d", g.shape(x), g.shape(kernel)));
    }
    let (left, right) = match padding {
        Padding::Symmetric => {
            if k.is_multiple_of(2) {
                return Err(Error::contract("symmetric padding needs an odd kernel width"));
            }
            ((k - 1) / 2, (k - 1) / 2)
        }
        Padding::Causal => (k - 1, 0),
    };
    let windows = g.unfold(x, k, left, right)?;
    let y = g.matmul_bt(windows, kernel)?;
    g.add_row(y, bias)
}

/// Gated linear unit: `[A B] ↦ A ⊗ σ(B)` over the last axis.
pub fn glu<F: Scalar>(g: &mut Graph<F>, y: Var) -> Result<Var> {
    let n = g.value(y).cols();
    if !n.is_multiple_of(2) {
        return Err(Error::contract(alloc::format!(
            "glu needs an even last dimension, got {n}"
        )));
    }
    let a = g.slice_cols(y, 0, n / 2)?;
    let b = g.slice_cols(y, n / 2, n)?;
    let gate = g.sigmoid(b);
    g.mul(a, gate)
}

/// Inverted dropout. Without an rng (inference) it is the identity.
pub fn dropout<F: Scalar>(g: &mut Graph<F>, x: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = F::of(1.0 / (1.0 - p));
            let mask = Tensor::from_fn(g.shape(x), |_| if rng::bernoulli(rng, p) { F::zero() } else { keep });
            g.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

/// Bases of the sinusoidal position encoding. Even columns use
/// `sin(pos/sin_base^(2i/d))`, odd columns `cos(pos/cos_base^(2i/d))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinusoidBases {
    pub sin_base: f64,
    pub cos_base: f64,
}

impl Default for SinusoidBases {
    fn default() -> Self {
        SinusoidBases {
            sin_base: 10000.0,
            cos_base: 10000.0,
        }
    }
}

pub fn positional_encoding(pos: usize, d_model: usize, bases: SinusoidBases) -> Vec<f64> {
    (0..d_model)
        .map(|j| {
            let i = (j / 2) as f64;
            let expo = 2.0 * i / d_model as f64;
            if j % 2 == 0 {
                Float::sin(pos as f64 / Float::powf(bases.sin_base, expo))
            } else {
                Float::cos(pos as f64 / Float::powf(bases.cos_base, expo))
            }
        })
        .collect()
}

/// `[len×d]` table of position encodings for positions `0..len`.
pub fn positional_table<F: Scalar>(len: usize, d_model: usize, bases: SinusoidBases) -> Tensor<F> {
    let mut data = Vec::with_capacity(len * d_model);
    for pos in 0..len {
        data.extend(positional_encoding(pos, d_model, bases).into_iter().map(F::of));
    }
    Tensor::new(&[len, d_model], data).expect("shape matches")
}

/// `[n×n]` additive mask hiding positions after the query position.
pub fn causal_mask<F: Scalar>(n: usize) -> Tensor<F> {
    Tensor::from_fn(&[n, n], |idx| {
        if idx % n > idx / n {
            F::of(MASK_VALUE)
        } else {
            F::zero()
        }
    })
}

/// `softmax(QKᵀ/√d_k + mask)·V`.
pub fn scaled_dot_attention<F: Scalar>(
    g: &mut Graph<F>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Tensor<F>>,
) -> Result<Var> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::dim("attention", qs, ks));
    }
    let d_k = qs[1];
    let scores = g.matmul_bt(q, k)?;
    let scores = g.scale(scores, F::of(1.0 / Float::sqrt(d_k as f64)));
    let scores = match mask {
        Some(m) => g.add_const(scores, m)?,
        None => scores,
    };
    let weights = g.softmax(scores);
    g.matmul(weights, v)
}

/// Projection matrices of one multi-head attention block. Head `i` uses
/// columns `i·d_k..(i+1)·d_k` of `w_q`, `w_k`, `w_v`.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadWeights {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

/// `Concat(head_1..head_h)·W^O` with
/// `head_i = Attention(Q·W_i^Q, K·W_i^K, V·W_i^V)`.
pub fn multi_head_attention<F: Scalar>(
    g: &mut Graph<F>,
    q: Var,
    k: Var,
    v: Var,
    w: &MultiHeadWeights,
    heads: usize,
    mask: Option<&Tensor<F>>,
) -> Result<Var> {
    let d_model = g.value(q).cols();
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::Config(alloc::format!(
            "d_model {d_model} not divisible by {heads} heads"
        )));
    }
    let d_k = d_model / heads;
    let qp = g.matmul(q, w.w_q)?;
    let kp = g.matmul(k, w.w_k)?;
    let vp = g.matmul(v, w.w_v)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(qp, h * d_k, (h + 1) * d_k)?;
        let kh = g.slice_cols(kp, h * d_k, (h + 1) * d_k)?;
        let vh = g.slice_cols(vp, h * d_k, (h + 1) * d_k)?;
        outs.push(scaled_dot_attention(g, qh, kh, vh, mask)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, w.w_o)
}

/// Position-wise `ReLU(x·W1 + b1)·W2 + b2`.
pub fn ffn<F: Scalar>(g: &mut Graph<F>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = linear(g, x, w1, Some(b1))?;
    let h = g.relu(h);
    linear(g, h, w2, Some(b2))
}

#[cfg(test)]
mod tests;
