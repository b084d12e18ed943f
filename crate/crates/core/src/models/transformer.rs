//! Self-attention encoder-decoder with post-norm residual sublayers,
//! sinusoidal positions and one embedding table shared by the source, the
//! target and the output projection.

use alloc::sync::Arc;
use alloc::vec::Vec;

use num_traits::Float;

use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{check_ids, scaled_normal, Seq2Seq};
use crate::nn::{causal_mask, dropout, ffn, multi_head_attention, positional_table, MultiHeadWeights, SinusoidBases};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::special::RESERVED;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub vocab: usize,
    /// Layers `N` in each of the encoder and decoder.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub positions: SinusoidBases,
    pub ln_eps: f64,
}

impl TransformerConfig {
    fn preset(vocab: usize, layers: usize, d_model: usize, heads: usize, d_ff: usize, dropout: f64) -> Self {
        TransformerConfig {
            vocab,
            layers,
            d_model,
            heads,
            d_ff,
            dropout,
            positions: SinusoidBases::default(),
            ln_eps: 1e-6,
        }
    }

    pub fn c_base(vocab: usize) -> Self {
        Self::preset(vocab, 2, 256, 4, 1024, 0.1)
    }

    pub fn c_1(vocab: usize) -> Self {
        Self::preset(vocab, 6, 512, 16, 2048, 0.15)
    }

    pub fn c_2(vocab: usize) -> Self {
        Self::preset(vocab, 8, 1024, 16, 4096, 0.15)
    }

    /// `N = 1`, `d_model = 32`, two heads, `d_ff = 64`.
    pub fn tiny(vocab: usize) -> Self {
        Self::preset(vocab, 1, 32, 2, 64, 0.1)
    }

    /// Per-head query, key and value width `d_model / h`.
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab <= RESERVED {
            return Err(Error::Config(alloc::format!(
                "vocabulary size {} too small",
                self.vocab
            )));
        }
        if self.layers == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(alloc::format!(
                "d_model {} not divisible by {} heads",
                self.d_model,
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Trainable parameters: the shared embedding plus `N` encoder and `N`
    /// decoder layers.
    pub fn param_count(&self) -> usize {
        let (d, ff) = (self.d_model, self.d_ff);
        let attention = 4 * d * d;
        let norm = 2 * d;
        let feed_forward = 2 * d * ff + ff + d;
        let encoder = attention + feed_forward + 2 * norm;
        let decoder = 2 * attention + feed_forward + 3 * norm;
        self.vocab * d + self.layers * (encoder + decoder)
    }
}

#[derive(Clone, Copy, Debug)]
struct AttentionIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    attn: AttentionIds,
    ln1: NormIds,
    ffn: FfnIds,
    ln2: NormIds,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    attn: AttentionIds,
    ln1: NormIds,
    cross: AttentionIds,
    ln2: NormIds,
    ffn: FfnIds,
    ln3: NormIds,
}

#[derive(Clone, Debug)]
struct TransformerIds {
    embed: ParamId,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
}

#[derive(Clone, Debug)]
pub struct TransformerModel<F> {
    cfg: TransformerConfig,
    store: ParamStore<F>,
    ids: TransformerIds,
}

impl AttentionIds {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize, rng: &mut Rng) -> Result<Self> {
        let mut w = |part: &str| store.insert(&alloc::format!("{name}.{part}"), scaled_normal(&[d, d], d, rng));
        Ok(AttentionIds {
            q: w("q")?,
            k: w("k")?,
            v: w("v")?,
            o: w("o")?,
        })
    }

    fn bind(&self, p: &Bound) -> MultiHeadWeights {
        MultiHeadWeights {
            w_q: p.var(self.q),
            w_k: p.var(self.k),
            w_v: p.var(self.v),
            w_o: p.var(self.o),
        }
    }
}

impl NormIds {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> Result<Self> {
        Ok(NormIds {
            gain: store.insert(&alloc::format!("{name}.g"), Tensor::full(&[1, d], F::one()))?,
            bias: store.insert(&alloc::format!("{name}.b"), Tensor::zeros(&[1, d]))?,
        })
    }
}

impl FfnIds {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize, ff: usize, rng: &mut Rng) -> Result<Self> {
        Ok(FfnIds {
            w1: store.insert(&alloc::format!("{name}.w1"), scaled_normal(&[d, ff], d, rng))?,
            b1: store.insert(&alloc::format!("{name}.b1"), Tensor::zeros(&[1, ff]))?,
            w2: store.insert(&alloc::format!("{name}.w2"), scaled_normal(&[ff, d], ff, rng))?,
            b2: store.insert(&alloc::format!("{name}.b2"), Tensor::zeros(&[1, d]))?,
        })
    }
}

impl<F: Scalar> TransformerModel<F> {
    /// Embedding from `N(0, 1/d_model)`, projections from `N(0, 1/fan_in)`,
    /// layer-norm gains one, biases zero.
    pub fn new(cfg: TransformerConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let mut store = ParamStore::new();
        let embed = store.insert("embed", scaled_normal(&[cfg.vocab, d], d, rng))?;
        let mut enc = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            enc.push(EncoderLayer {
                attn: AttentionIds::new(&mut store, &alloc::format!("enc.{i}.self"), d, rng)?,
                ln1: NormIds::new(&mut store, &alloc::format!("enc.{i}.ln1"), d)?,
                ffn: FfnIds::new(&mut store, &alloc::format!("enc.{i}.ffn"), d, ff, rng)?,
                ln2: NormIds::new(&mut store, &alloc::format!("enc.{i}.ln2"), d)?,
            });
        }
        let mut dec = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            dec.push(DecoderLayer {
                attn: AttentionIds::new(&mut store, &alloc::format!("dec.{i}.self"), d, rng)?,
                ln1: NormIds::new(&mut store, &alloc::format!("dec.{i}.ln1"), d)?,
                cross: AttentionIds::new(&mut store, &alloc::format!("dec.{i}.cross"), d, rng)?,
                ln2: NormIds::new(&mut store, &alloc::format!("dec.{i}.ln2"), d)?,
                ffn: FfnIds::new(&mut store, &alloc::format!("dec.{i}.ffn"), d, ff, rng)?,
                ln3: NormIds::new(&mut store, &alloc::format!("dec.{i}.ln3"), d)?,
            });
        }
        Ok(TransformerModel {
            cfg,
            store,
            ids: TransformerIds { embed, enc, dec },
        })
    }

    pub fn from_store(cfg: TransformerConfig, store: &ParamStore<F>) -> Result<Self> {
        let mut m = Self::new(cfg, &mut rng::seeded(0))?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    /// `Embedding·√d_model + PE`, followed by dropout.
    fn embed(&self, g: &mut Graph<F>, p: &Bound, ids: &[u32], rng: Option<&mut Rng>) -> Result<Var> {
        let d = self.cfg.d_model;
        let x = g.gather(p.var(self.ids.embed), ids)?;
        let x = g.scale(x, F::of(Float::sqrt(d as f64)));
        let pe = positional_table::<F>(ids.len(), d, self.cfg.positions);
        let x = g.add_const(x, &pe)?;
        dropout(g, x, self.cfg.dropout, rng)
    }

    /// `LayerNorm(x + Dropout(y))`.
    fn residual_norm(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        x: Var,
        y: Var,
        ln: NormIds,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let y = dropout(g, y, self.cfg.dropout, rng)?;
        let s = g.add(x, y)?;
        g.layer_norm(s, p.var(ln.gain), p.var(ln.bias), F::of(self.cfg.ln_eps))
    }

    fn feed_forward(&self, g: &mut Graph<F>, p: &Bound, x: Var, f: FfnIds) -> Result<Var> {
        ffn(g, x, p.var(f.w1), p.var(f.b1), p.var(f.w2), p.var(f.b2))
    }

    /// Encoder outputs `[m×d_model]`.
    pub fn encode(&self, g: &mut Graph<F>, p: &Bound, src: &[u32], mut rng: Option<&mut Rng>) -> Result<Var> {
        check_ids(src, self.cfg.vocab, "source")?;
        let mut x = self.embed(g, p, src, rng.as_deref_mut())?;
        for layer in &self.ids.enc {
            let a = multi_head_attention(g, x, x, x, &layer.attn.bind(p), self.cfg.heads, None)?;
            x = self.residual_norm(g, p, x, a, layer.ln1, rng.as_deref_mut())?;
            let f = self.feed_forward(g, p, x, layer.ffn)?;
            x = self.residual_norm(g, p, x, f, layer.ln2, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Decoder logits `[len(tgt_in)×T]` against the tied embedding.
    pub fn decode(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        enc: Var,
        tgt_in: &[u32],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        check_ids(tgt_in, self.cfg.vocab, "target prefix")?;
        let mask = causal_mask::<F>(tgt_in.len());
        let mut y = self.embed(g, p, tgt_in, rng.as_deref_mut())?;
        for layer in &self.ids.dec {
            let a = multi_head_attention(g, y, y, y, &layer.attn.bind(p), self.cfg.heads, Some(&mask))?;
            y = self.residual_norm(g, p, y, a, layer.ln1, rng.as_deref_mut())?;
            let c = multi_head_attention(g, y, enc, enc, &layer.cross.bind(p), self.cfg.heads, None)?;
            y = self.residual_norm(g, p, y, c, layer.ln2, rng.as_deref_mut())?;
            let f = self.feed_forward(g, p, y, layer.ffn)?;
            y = self.residual_norm(g, p, y, f, layer.ln3, rng.as_deref_mut())?;
        }
        g.matmul_bt(y, p.var(self.ids.embed))
    }
}

impl<F: Scalar> Seq2Seq<F> for TransformerModel<F> {
    fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn max_positions(&self) -> Option<usize> {
        None
    }

    fn log_probs(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        src: &[u32],
        tgt_in: &[u32],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let enc = self.encode(g, p, src, rng.as_deref_mut())?;
        let logits = self.decode(g, p, enc, tgt_in, rng)?;
        Ok(g.log_softmax(logits))
    }
}

/// Encoder outputs plus the target prefix read so far.
#[derive(Clone, Debug)]
pub struct TransformerState<F> {
    enc: Arc<Tensor<F>>,
    prefix: Vec<u32>,
}

impl<F: Scalar> StepModel for TransformerModel<F> {
    type State = TransformerState<F>;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn start(&self, src: &[u32]) -> Result<TransformerState<F>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &p, src, None)?;
        Ok(TransformerState {
            enc: Arc::new(g.value(enc).clone()),
            prefix: Vec::new(),
        })
    }

    fn step(&self, state: &TransformerState<F>, prev: u32) -> Result<(Vec<f64>, TransformerState<F>)> {
        let mut prefix = state.prefix.clone();
        prefix.push(prev);
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let enc = g.constant(Arc::clone(&state.enc));
        let logits = self.decode(&mut g, &p, enc, &prefix, None)?;
        let last = g.slice_rows(logits, prefix.len() - 1, prefix.len())?;
        let lp = g.log_softmax(last);
        let out = g.value(lp).data().iter().map(|v| v.f64()).collect();
        Ok((
            out,
            TransformerState {
                enc: Arc::clone(&state.enc),
                prefix,
            },
        ))
    }
}
