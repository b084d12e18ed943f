//! The three encoder-decoder families and what they share: teacher forcing,
//! the per-pair training loss and parameter initialization.

pub mod convs2s;
pub mod rnn;
pub mod transformer;

use alloc::vec::Vec;

use num_traits::Float;

use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::special::{BOS, EOS};
use crate::tensor::Tensor;

pub use convs2s::{ConvS2SConfig, ConvS2SModel, LayerGroup};
pub use rnn::{RnnConfig, RnnModel};
pub use transformer::{TransformerConfig, TransformerModel};

/// A trainable encoder-decoder.
pub trait Seq2Seq<F: Scalar>: Send + Sync {
    fn store(&self) -> &ParamStore<F>;
    fn store_mut(&mut self) -> &mut ParamStore<F>;
    fn vocab_size(&self) -> usize;

    /// Longest source or decoder input the model can position-encode, if
    /// bounded.
    fn max_positions(&self) -> Option<usize>;

    /// Teacher-forced log-probabilities `[len(tgt_in) × T]`: row `t`
    /// is the distribution after reading `tgt_in[..=t]`. Dropout is active
    /// when an rng is supplied.
    fn log_probs(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        src: &[u32],
        tgt_in: &[u32],
        dropout: Option<&mut Rng>,
    ) -> Result<Var>;
}

/// Decoder input `[BOS, y…]` and prediction targets `[y…, EOS]`.
pub fn teacher_forcing(tgt: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(tgt.len() + 1);
    input.push(BOS);
    input.extend_from_slice(tgt);
    let mut output = tgt.to_vec();
    output.push(EOS);
    (input, output)
}

pub struct PairLoss {
    /// Summed label-smoothed cross-entropy over target positions.
    pub loss: Var,
    pub log_probs: Var,
    pub targets: Vec<u32>,
}

pub fn pair_loss<F: Scalar, M: Seq2Seq<F> + ?Sized>(
    model: &M,
    g: &mut Graph<F>,
    p: &Bound,
    src: &[u32],
    tgt: &[u32],
    label_smoothing: f64,
    dropout: Option<&mut Rng>,
) -> Result<PairLoss> {
    let (tgt_in, targets) = teacher_forcing(tgt);
    let log_probs = model.log_probs(g, p, src, &tgt_in, dropout)?;
    let loss = g.smoothed_nll(log_probs, &targets, F::of(label_smoothing))?;
    Ok(PairLoss {
        loss,
        log_probs,
        targets,
    })
}

/// Teacher-forced log-likelihood `Σ_t log p(y_t | y_<t, x)` including the
/// end marker.
pub fn sequence_log_likelihood<F: Scalar, M: Seq2Seq<F> + ?Sized>(model: &M, src: &[u32], tgt: &[u32]) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.store().bind_frozen(&mut g);
    let (tgt_in, targets) = teacher_forcing(tgt);
    let lp = model.log_probs(&mut g, &p, src, &tgt_in, None)?;
    let lp = g.value(lp);
    Ok(targets
        .iter()
        .enumerate()
        .map(|(t, &y)| lp.at(t, y as usize).f64())
        .sum())
}

pub(crate) fn check_ids(ids: &[u32], vocab: usize, what: &str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::contract(alloc::format!("empty {what}")));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
        return Err(Error::contract(alloc::format!(
            "token id {bad} in {what} >= vocabulary size {vocab}"
        )));
    }
    Ok(())
}

/// Normal initialization with standard deviation `fan_in^-0.5`.
pub(crate) fn scaled_normal<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<F> {
    Tensor::normal(shape, 1.0 / Float::sqrt(fan_in.max(1) as f64), rng)
}

/// Architecture choice with its hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelConfig {
    Rnn(RnnConfig),
    ConvS2S(ConvS2SConfig),
    Transformer(TransformerConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Rnn(_) => "rnn",
            ModelConfig::ConvS2S(_) => "convs2s",
            ModelConfig::Transformer(_) => "transformer",
        }
    }

    pub fn vocab(&self) -> usize {
        match self {
            ModelConfig::Rnn(c) => c.vocab,
            ModelConfig::ConvS2S(c) => c.vocab,
            ModelConfig::Transformer(c) => c.vocab,
        }
    }

    pub fn set_vocab(&mut self, vocab: usize) {
        match self {
            ModelConfig::Rnn(c) => c.vocab = vocab,
            ModelConfig::ConvS2S(c) => c.vocab = vocab,
            ModelConfig::Transformer(c) => c.vocab = vocab,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelConfig::Rnn(c) => c.param_count(),
            ModelConfig::ConvS2S(c) => c.param_count(),
            ModelConfig::Transformer(c) => c.param_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Rnn(c) => c.validate(),
            ModelConfig::ConvS2S(c) => c.validate(),
            ModelConfig::Transformer(c) => c.validate(),
        }
    }

    pub fn build<F: Scalar>(&self, rng: &mut Rng) -> Result<Model<F>> {
        Ok(match self {
            ModelConfig::Rnn(c) => Model::Rnn(RnnModel::new(c.clone(), rng)?),
            ModelConfig::ConvS2S(c) => Model::ConvS2S(ConvS2SModel::new(c.clone(), rng)?),
            ModelConfig::Transformer(c) => Model::Transformer(TransformerModel::new(c.clone(), rng)?),
        })
    }

    /// Builds the layout and loads weights from a checkpoint store.
    pub fn load<F: Scalar>(&self, store: &ParamStore<F>) -> Result<Model<F>> {
        Ok(match self {
            ModelConfig::Rnn(c) => Model::Rnn(RnnModel::from_store(c.clone(), store)?),
            ModelConfig::ConvS2S(c) => Model::ConvS2S(ConvS2SModel::from_store(c.clone(), store)?),
            ModelConfig::Transformer(c) => Model::Transformer(TransformerModel::from_store(c.clone(), store)?),
        })
    }
}

/// A model of any family, selected at run time.
#[derive(Clone, Debug)]
pub enum Model<F> {
    Rnn(RnnModel<F>),
    ConvS2S(ConvS2SModel<F>),
    Transformer(TransformerModel<F>),
}

macro_rules! each {
    ($m:expr, $x:ident => $e:expr) => {
        match $m {
            Model::Rnn($x) => $e,
            Model::ConvS2S($x) => $e,
            Model::Transformer($x) => $e,
        }
    };
}

impl<F: Scalar> Seq2Seq<F> for Model<F> {
    fn store(&self) -> &ParamStore<F> {
        each!(self, m => m.store())
    }

    fn store_mut(&mut self) -> &mut ParamStore<F> {
        each!(self, m => m.store_mut())
    }

    fn vocab_size(&self) -> usize {
        each!(self, m => Seq2Seq::vocab_size(m))
    }

    fn max_positions(&self) -> Option<usize> {
        each!(self, m => m.max_positions())
    }

    fn log_probs(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        src: &[u32],
        tgt_in: &[u32],
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        each!(self, m => m.log_probs(g, p, src, tgt_in, dropout))
    }
}

#[derive(Clone, Debug)]
pub enum ModelState<F> {
    Rnn(rnn::RnnState<F>),
    ConvS2S(convs2s::ConvState<F>),
    Transformer(transformer::TransformerState<F>),
}

impl<F: Scalar> StepModel for Model<F> {
    type State = ModelState<F>;

    fn vocab_size(&self) -> usize {
        Seq2Seq::vocab_size(self)
    }

    fn start(&self, src: &[u32]) -> Result<ModelState<F>> {
        Ok(match self {
            Model::Rnn(m) => ModelState::Rnn(m.start(src)?),
            Model::ConvS2S(m) => ModelState::ConvS2S(m.start(src)?),
            Model::Transformer(m) => ModelState::Transformer(m.start(src)?),
        })
    }

    fn step(&self, state: &ModelState<F>, prev: u32) -> Result<(Vec<f64>, ModelState<F>)> {
        match (self, state) {
            (Model::Rnn(m), ModelState::Rnn(s)) => m.step(s, prev).map(|(p, s)| (p, ModelState::Rnn(s))),
            (Model::ConvS2S(m), ModelState::ConvS2S(s)) => m.step(s, prev).map(|(p, s)| (p, ModelState::ConvS2S(s))),
            (Model::Transformer(m), ModelState::Transformer(s)) => {
                m.step(s, prev).map(|(p, s)| (p, ModelState::Transformer(s)))
            }
            _ => Err(Error::contract("decoder state belongs to a different model family")),
        }
    }
}
