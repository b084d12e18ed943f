//! Optimizers, learning-rate schedules, gradient clipping, token-budget
//! batching and checkpoint averaging.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{pair_loss, Seq2Seq};
use crate::params::{ParamGrads, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Nesterov momentum in the form `v ← μv − ηg`, `θ ← θ + μv − ηg`.
    Nag {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }

    pub const fn nag() -> Self {
        OptimizerKind::Nag { momentum: 0.99 }
    }
}

/// Optimizer with per-parameter moment buffers shaped like the parameters.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    pub step_num: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<F>) -> Self {
        let zeros = |on: bool| {
            if on {
                store.tensors().map(|t| Tensor::zeros(t.shape())).collect()
            } else {
                Vec::new()
            }
        };
        let (m, v) = match kind {
            OptimizerKind::Sgd => (false, false),
            OptimizerKind::Nag { .. } => (true, false),
            OptimizerKind::Adam { .. } => (true, true),
        };
        Optimizer {
            kind,
            step_num: 0,
            first: zeros(m),
            second: zeros(v),
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &ParamGrads<F>, lr: f64) {
        self.step_num += 1;
        let lr_f = F::of(lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in store.tensors_mut().zip(&grads.grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr_f * d;
                    }
                }
            }
            OptimizerKind::Nag { momentum } => {
                let mu = F::of(momentum);
                for ((p, g), v) in store.tensors_mut().zip(&grads.grads).zip(&mut self.first) {
                    for ((w, &d), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vel = mu * *vel - lr_f * d;
                        *w += mu * *vel - lr_f * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step_num as i32;
                let c1 = F::of(1.0 - beta1.powi(t));
                let c2 = F::of(1.0 - beta2.powi(t));
                let (b1, b2, e) = (F::of(beta1), F::of(beta2), F::of(eps));
                let one = F::one();
                let params = store.tensors_mut().zip(&grads.grads);
                for ((p, g), (m, v)) in params.zip(self.first.iter_mut().zip(&mut self.second)) {
                    let slots = m.data_mut().iter_mut().zip(v.data_mut());
                    for ((w, &d), (mi, vi)) in p.data_mut().iter_mut().zip(g.data()).zip(slots) {
                        *mi = b1 * *mi + (one - b1) * d;
                        *vi = b2 * *vi + (one - b2) * d * d;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr_f * m_hat / (v_hat.sqrt() + e);
                    }
                }
            }
        }
    }
}

/// Learning rate for epoch `epoch ≥ 1`: `base` up to `start`, halved every
/// epoch after.
pub fn lr_halving(epoch: u32, base: f64, start: u32) -> f64 {
    if epoch <= start {
        base
    } else {
        base * Float::powi(0.5, (epoch - start) as i32)
    }
}

/// Learning-rate floor below which force-annealed training stops.
pub const ANNEAL_STOP: f64 = 1e-5;

/// `base` before `start`, multiplied by `shrink` once per epoch from
/// `start` on. `None` once the rate falls below [`ANNEAL_STOP`].
pub fn lr_force_anneal(epoch: u32, base: f64, start: u32, shrink: f64) -> Option<f64> {
    let lr = if epoch < start {
        base
    } else {
        base * Float::powi(shrink, (epoch - start + 1) as i32)
    };
    (lr >= ANNEAL_STOP).then_some(lr)
}

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`. With
/// `paper_literal` the second term is `step^-0.5 · warmup^-1.5` instead,
/// which makes the warm-up inert.
pub fn lr_noam(step: u64, d_model: usize, warmup: u64, paper_literal: bool) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    let decay = Float::powf(s, -0.5);
    let ramp = if paper_literal {
        Float::powf(s, -0.5) * Float::powf(w, -1.5)
    } else {
        s * Float::powf(w, -1.5)
    };
    Float::powf(d_model as f64, -0.5) * decay.min(ramp)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    Halving {
        base: f64,
        start: u32,
    },
    ForceAnneal {
        base: f64,
        start: u32,
        shrink: f64,
    },
    Noam {
        d_model: usize,
        warmup: u64,
        scale: f64,
        paper_literal: bool,
    },
}

impl Schedule {
    /// Learning rate for a 1-based step within a 1-based epoch; `None` means
    /// stop training.
    pub fn lr(&self, step: u64, epoch: u32) -> Option<f64> {
        match *self {
            Schedule::Constant { lr } => Some(lr),
            Schedule::Halving { base, start } => Some(lr_halving(epoch, base, start)),
            Schedule::ForceAnneal { base, start, shrink } => lr_force_anneal(epoch, base, start, shrink),
            Schedule::Noam {
                d_model,
                warmup,
                scale,
                paper_literal,
            } => Some(scale * lr_noam(step, d_model, warmup, paper_literal)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Constant { lr } => lr > 0.0,
            Schedule::Halving { base, .. } => base > 0.0,
            Schedule::ForceAnneal { base, shrink, .. } => base > 0.0 && shrink > 0.0 && shrink < 1.0,
            Schedule::Noam {
                d_model, warmup, scale, ..
            } => d_model > 0 && warmup > 0 && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid schedule {self:?}")))
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `threshold`. Returns
/// the norm before clipping.
pub fn clip_gradients<F: Scalar>(grads: &mut ParamGrads<F>, threshold: f64) -> Result<f64> {
    let s = grads.norm();
    if !s.is_finite() {
        return Err(Error::Divergence(alloc::format!("gradient norm is {s}")));
    }
    if s > threshold {
        grads.scale(F::of(threshold / s));
    }
    Ok(s)
}

/// Cross-entropy of one distribution against
/// `q = (1−eps)·onehot(target) + eps/T`.
pub fn label_smoothed_loss(log_probs: &[f64], target: u32, eps: f64) -> Result<f64> {
    let t = log_probs.len();
    if target as usize >= t {
        return Err(Error::contract(alloc::format!(
            "target id {target} >= vocabulary size {t}"
        )));
    }
    let uniform = eps / t as f64;
    Ok(-log_probs
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            let q = uniform + if i == target as usize { 1.0 - eps } else { 0.0 };
            q * lp
        })
        .sum::<f64>())
}

/// What happens to pairs longer than `max_length`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthMode {
    Exclude,
    Truncate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    /// Pair indices of each batch, in training order.
    pub batches: Vec<Vec<usize>>,
    /// Summed pair cost of each batch.
    pub costs: Vec<usize>,
    pub budget: usize,
    pub max_length: usize,
}

/// Cost of one pair: the longer side, in subwords.
pub fn pair_cost(src_len: usize, tgt_len: usize) -> usize {
    src_len.max(tgt_len)
}

/// Greedy token-budget batching over `(source length, target length)`
/// pairs, visited in shuffled order when a seed is given.
pub fn plan_batches(
    lengths: &[(usize, usize)],
    budget: usize,
    max_length: usize,
    mode: LengthMode,
    shuffle_seed: Option<u64>,
) -> Result<BatchPlan> {
    let mut order: Vec<usize> = match shuffle_seed {
        Some(seed) => rng::permutation(&mut rng::seeded(seed), lengths.len()),
        None => (0..lengths.len()).collect(),
    };
    order.retain(|&i| {
        let (s, t) = lengths[i];
        s > 0 && t > 0 && (mode == LengthMode::Truncate || pair_cost(s, t) <= max_length)
    });
    if order.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut plan = BatchPlan {
        batches: Vec::new(),
        costs: Vec::new(),
        budget,
        max_length,
    };
    let mut current = Vec::new();
    let mut cost = 0;
    for i in order {
        let (s, t) = lengths[i];
        let c = pair_cost(s, t).min(max_length);
        if !current.is_empty() && cost + c > budget {
            plan.batches.push(core::mem::take(&mut current));
            plan.costs.push(cost);
            cost = 0;
        }
        current.push(i);
        cost += c;
    }
    plan.batches.push(current);
    plan.costs.push(cost);
    Ok(plan)
}

/// Training epochs covered by `steps` steps of `batch_tokens` tokens over a
/// corpus of `corpus_tokens` tokens.
pub fn epochs_from_steps(steps: u64, batch_tokens: usize, corpus_tokens: usize) -> f64 {
    steps as f64 * batch_tokens as f64 / corpus_tokens.max(1) as f64
}

/// Elementwise mean of checkpoints. Each element's values are sorted and
/// summed in 64-bit before rounding, so the result does not depend on the
/// input order.
pub fn average_checkpoints(stores: &[ParamStore<f32>]) -> Result<ParamStore<f32>> {
    let first = stores
        .first()
        .ok_or_else(|| Error::Checkpoint("no checkpoints to average".into()))?;
    for (k, s) in stores.iter().enumerate().skip(1) {
        if s.names() != first.names() {
            return Err(Error::IncompatibleCheckpoint(alloc::format!(
                "checkpoint {k} has different parameter names"
            )));
        }
        for ((name, a), b) in first.iter().zip(s.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::IncompatibleCheckpoint(alloc::format!(
                    "checkpoint {k}: {name} has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
    }
    let n = stores.len() as f64;
    let mut out = first.clone();
    let all: Vec<Vec<&Tensor<f32>>> = stores.iter().map(|s| s.tensors().collect()).collect();
    let mut column = Vec::with_capacity(stores.len());
    for (k, t) in out.tensors_mut().enumerate() {
        for (i, w) in t.data_mut().iter_mut().enumerate() {
            column.clear();
            column.extend(all.iter().map(|s| s[k].data()[i] as f64));
            column.sort_by(f64::total_cmp);
            *w = (column.iter().sum::<f64>() / n) as f32;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub n: usize,
    /// Spacing between consecutive checkpoints, as a fraction of an epoch.
    pub interval: f64,
}

/// Picks the latest saved step plus `n−1` predecessors spaced
/// `interval·steps_per_epoch` steps apart, each rounded to the nearest
/// saved step within half a spacing. Result is newest first.
pub fn select_ensemble_checkpoints(available: &[u64], spec: EnsembleSpec, steps_per_epoch: f64) -> Result<Vec<u64>> {
    if spec.n == 0 || !(spec.interval > 0.0) {
        return Err(Error::Config(alloc::format!("invalid ensemble spec {spec:?}")));
    }
    let mut steps = available.to_vec();
    steps.sort_unstable();
    steps.dedup();
    let insufficient = |reason: alloc::string::String| Error::InsufficientHistory {
        reason,
        available: steps.clone(),
    };
    let Some(&last) = steps.last() else {
        return Err(insufficient("no checkpoints saved".into()));
    };
    let spacing = spec.interval * steps_per_epoch;
    let mut chosen = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let target = last as f64 - (i as f64 * spacing).round();
        let nearest = steps.iter().copied().filter(|s| !chosen.contains(s)).min_by(|a, b| {
            let (da, db) = ((*a as f64 - target).abs(), (*b as f64 - target).abs());
            da.total_cmp(&db).then(b.cmp(a))
        });
        match nearest {
            Some(s) if i == 0 || (s as f64 - target).abs() <= spacing / 2.0 => chosen.push(s),
            _ => {
                return Err(insufficient(alloc::format!(
                    "need {} checkpoints spaced {spacing} steps apart; none saved near step {target}",
                    spec.n
                )))
            }
        }
    }
    Ok(chosen)
}

/// Loss, gradients and target-token count of one sentence pair. Dropout
/// draws come from `rng` when given.
pub fn pair_gradients<F: Scalar, M: Seq2Seq<F> + ?Sized>(
    model: &M,
    src: &[u32],
    tgt: &[u32],
    label_smoothing: f64,
    rng: Option<&mut Rng>,
) -> Result<(f64, ParamGrads<F>, usize)> {
    let mut g = Graph::new();
    let p = model.store().bind(&mut g);
    let out = pair_loss(model, &mut g, &p, src, tgt, label_smoothing, rng)?;
    let loss = g.value(out.loss).item().f64();
    if !loss.is_finite() {
        return Err(Error::Divergence(alloc::format!("loss is {loss}")));
    }
    let grads = p.gradients(model.store(), g.backward(out.loss)?);
    Ok((loss, grads, out.targets.len()))
}
