//! Convolutional encoder-decoder: stacked 1-D convolutions with gated
//! linear units and residual connections, learned position embeddings, and
//! a separate attention over the encoder at every decoder layer.

use alloc::sync::Arc;
use alloc::vec::Vec;

use num_traits::Float;

use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{check_ids, scaled_normal, Seq2Seq};
use crate::nn::{conv1d, dropout, glu, Padding};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::special::RESERVED;
use crate::tensor::Tensor;

/// `count` consecutive layers with `channels` output channels and kernel
/// width `kernel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGroup {
    pub count: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl LayerGroup {
    pub const fn new(count: usize, channels: usize, kernel: usize) -> Self {
        LayerGroup {
            count,
            channels,
            kernel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvS2SConfig {
    pub vocab: usize,
    pub encoder: Vec<LayerGroup>,
    pub decoder: Vec<LayerGroup>,
    /// Width `f` of token and position embeddings.
    pub embed: usize,
    /// Width of the pre-softmax output embedding. When equal to `embed`
    /// the output projection reuses the token embedding table.
    pub out_embed: usize,
    pub dropout: f64,
    pub max_positions: usize,
    /// Scale residual sums and attention inputs by `√0.5` and the
    /// attention context by `√m`, as in the reference implementation.
    /// Off gives the bare equations.
    pub faithful_scaling: bool,
}

const DEFAULT_POSITIONS: usize = 1024;

fn big_stack(n512: usize, n1024: usize) -> Vec<LayerGroup> {
    alloc::vec![LayerGroup::new(n512, 512, 3), LayerGroup::new(n1024, 1024, 3)]
}

impl ConvS2SConfig {
    fn symmetric(vocab: usize, stack: Vec<LayerGroup>, embed: usize, out_embed: usize, dropout: f64) -> Self {
        ConvS2SConfig {
            vocab,
            encoder: stack.clone(),
            decoder: stack,
            embed,
            out_embed,
            dropout,
            max_positions: DEFAULT_POSITIONS,
            faithful_scaling: true,
        }
    }

    pub fn b_base(vocab: usize) -> Self {
        ConvS2SConfig {
            decoder: alloc::vec![LayerGroup::new(3, 256, 3)],
            ..Self::symmetric(vocab, alloc::vec![LayerGroup::new(4, 256, 3)], 256, 256, 0.1)
        }
    }

    pub fn b_1(vocab: usize) -> Self {
        let mut s = big_stack(4, 2);
        s.push(LayerGroup::new(1, 2048, 1));
        Self::symmetric(vocab, s, 384, 384, 0.15)
    }

    pub fn b_2(vocab: usize) -> Self {
        let mut s = big_stack(9, 4);
        s.push(LayerGroup::new(2, 2048, 1));
        Self::symmetric(vocab, s, 768, 512, 0.15)
    }

    pub fn b_3(vocab: usize) -> Self {
        let mut s = big_stack(8, 4);
        s.push(LayerGroup::new(2, 2048, 1));
        s.push(LayerGroup::new(1, 4096, 1));
        Self::symmetric(vocab, s, 768, 768, 0.15)
    }

    /// Two layers of 32 channels, `f = 32`.
    pub fn tiny(vocab: usize) -> Self {
        Self::symmetric(vocab, alloc::vec![LayerGroup::new(2, 32, 3)], 32, 32, 0.1)
    }

    /// Number of source positions one top-level encoder output can see.
    pub fn effective_context(&self) -> usize {
        1 + self.encoder.iter().map(|g| g.count * (g.kernel - 1)).sum::<usize>()
    }

    pub fn tied_output(&self) -> bool {
        self.out_embed == self.embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab <= RESERVED {
            return Err(Error::Config(alloc::format!(
                "vocabulary size {} too small",
                self.vocab
            )));
        }
        for (side, groups) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            if groups.iter().map(|g| g.count).sum::<usize>() == 0 {
                return Err(Error::Config(alloc::format!("{side} has no layers")));
            }
            for g in groups.iter() {
                if g.channels == 0 || g.kernel == 0 {
                    return Err(Error::Config(alloc::format!("{side} layer group {g:?} is empty")));
                }
                if g.kernel % 2 == 0 {
                    return Err(Error::Config(alloc::format!(
                        "{side} kernel width {} must be odd",
                        g.kernel
                    )));
                }
            }
        }
        if self.embed == 0 || self.out_embed == 0 || self.max_positions == 0 {
            return Err(Error::Config("convs2s widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Trainable parameters, counted from the layer specification.
    pub fn param_count(&self) -> usize {
        let (f, t) = (self.embed, self.vocab);
        let layers = |groups: &[LayerGroup], attention: bool| {
            let mut prev = groups.iter().find(|g| g.count > 0).map_or(0, |g| g.channels);
            let first = prev;
            let mut n = 0;
            for g in groups {
                for _ in 0..g.count {
                    let s = g.channels;
                    n += 2 * s * g.kernel * prev + 2 * s;
                    if prev != s {
                        n += prev * s;
                    }
                    if attention {
                        n += s * f + f + f * s + s;
                    }
                    prev = s;
                }
            }
            (first, prev, n)
        };
        let (e0, el, en) = layers(&self.encoder, false);
        let (d0, dl, dn) = layers(&self.decoder, true);
        let mut n = t * f + 2 * self.max_positions * f;
        n += f * e0 + e0 + en + el * f + f;
        n += f * d0 + d0 + dn + dl * self.out_embed + self.out_embed;
        if !self.tied_output() {
            n += self.out_embed * t;
        }
        n + t
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, fan_in: usize, out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Linear {
            w: store.insert(&alloc::format!("{name}.w"), scaled_normal(&[fan_in, out], fan_in, rng))?,
            b: store.insert(&alloc::format!("{name}.b"), Tensor::zeros(&[1, out]))?,
        })
    }

    fn apply<F: Scalar>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add_row(y, p.var(self.b))
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    kernel: usize,
    conv_w: ParamId,
    conv_b: ParamId,
    res: Option<ParamId>,
    att_in: Option<Linear>,
    att_out: Option<Linear>,
}

#[derive(Clone, Debug)]
struct ConvIds {
    embed: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc_in: Linear,
    enc_layers: Vec<LayerIds>,
    enc_out: Linear,
    dec_in: Linear,
    dec_layers: Vec<LayerIds>,
    dec_out: Linear,
    out_w: Option<ParamId>,
    out_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct ConvS2SModel<F> {
    cfg: ConvS2SConfig,
    store: ParamStore<F>,
    ids: ConvIds,
}

/// Bound weights of one convolutional block.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub kernel_w: Var,
    pub kernel_b: Var,
    pub width: usize,
    /// Projection of the residual when the channel count changes.
    pub res: Option<Var>,
}

/// Bound weights of one decoder attention.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub w_v: Var,
    pub b_v: Var,
    pub w_out: Var,
    pub b_out: Var,
}

/// Encoder result: outputs `e^u` and attention values `e^u + z`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOut {
    pub keys: Var,
    pub values: Var,
}

fn sqrt_half<F: Scalar>() -> F {
    F::of(Float::sqrt(0.5))
}

fn positions(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

/// Token embeddings plus learned position embeddings for positions
/// `0..len(ids)`.
pub fn embed_with_positions<F: Scalar>(g: &mut Graph<F>, tokens: Var, pos: Var, ids: &[u32]) -> Result<Var> {
    let max = g.value(pos).rows();
    if ids.len() > max {
        return Err(Error::contract(alloc::format!(
            "sequence of length {} exceeds {max} trained positions",
            ids.len()
        )));
    }
    let w = g.gather(tokens, ids)?;
    let p = g.gather(pos, &positions(ids.len()))?;
    g.add(w, p)
}

/// `v(W[x_{j−k/2..j+k/2}] + b) + x_j`, with the residual projected when the
/// channel count changes and left-only padding when `causal`.
pub fn conv_block<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    block: &ConvBlock,
    causal: bool,
    faithful: bool,
    rng: Option<&mut Rng>,
    p_drop: f64,
) -> Result<Var> {
    let s_in = g.value(x).cols();
    let s_out = g.value(block.kernel_b).cols() / 2;
    let residual = match block.res {
        Some(w) => g.matmul(x, w)?,
        None if s_in == s_out => x,
        None => {
            return Err(Error::contract(alloc::format!(
                "residual from {s_in} to {s_out} channels needs a projection"
            )))
        }
    };
    let h = dropout(g, x, p_drop, rng)?;
    let padding = if causal { Padding::Causal } else { Padding::Symmetric };
    let h = conv1d(g, h, block.kernel_w, block.kernel_b, block.width, padding)?;
    let h = glu(g, h)?;
    let y = g.add(h, residual)?;
    Ok(if faithful { g.scale(y, sqrt_half()) } else { y })
}

/// Attention of decoder states `d: [n×s]` over encoder outputs. Returns the
/// conditional inputs `c: [n×f]` and alignment `a: [n×m]`, where
/// `a_kj = softmax_j((W_v d_k + b_v + g_k)·e_j)` and `c_k = Σ_j a_kj v_j`.
pub fn multistep_attention<F: Scalar>(
    g: &mut Graph<F>,
    d: Var,
    target_embed: Var,
    enc: &EncoderOut,
    w: &AttentionWeights,
    faithful: bool,
) -> Result<(Var, Var)> {
    let m = g.value(enc.keys).rows();
    if m == 0 || g.value(enc.values).rows() != m {
        return Err(Error::contract("attention needs a nonempty encoder output"));
    }
    let v = g.matmul(d, w.w_v)?;
    let v = g.add_row(v, w.b_v)?;
    let mut v = g.add(v, target_embed)?;
    if faithful {
        v = g.scale(v, sqrt_half());
    }
    let scores = g.matmul_bt(v, enc.keys)?;
    let a = g.softmax(scores);
    let mut c = g.matmul(a, enc.values)?;
    if faithful {
        c = g.scale(c, F::of(Float::sqrt(m as f64)));
    }
    Ok((c, a))
}

/// Pre-softmax logits `d·W_o + b_o`; with `tied`, `w_o` is the `[T×f]`
/// embedding table and is used transposed.
pub fn convs2s_output<F: Scalar>(g: &mut Graph<F>, d: Var, w_o: Var, b_o: Var, tied: bool) -> Result<Var> {
    let y = if tied { g.matmul_bt(d, w_o)? } else { g.matmul(d, w_o)? };
    g.add_row(y, b_o)
}

fn build_layers<F: Scalar>(
    store: &mut ParamStore<F>,
    side: &str,
    groups: &[LayerGroup],
    attention_width: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<LayerIds>> {
    let mut prev = groups.iter().find(|g| g.count > 0).map_or(0, |g| g.channels);
    let mut out = Vec::new();
    for group in groups {
        for _ in 0..group.count {
            let i = out.len();
            let (s, k) = (group.channels, group.kernel);
            let conv_w = store.insert(
                &alloc::format!("{side}.{i}.conv.w"),
                scaled_normal(&[2 * s, k * prev], k * prev, rng),
            )?;
            let conv_b = store.insert(&alloc::format!("{side}.{i}.conv.b"), Tensor::zeros(&[1, 2 * s]))?;
            let res = if prev != s {
                Some(store.insert(
                    &alloc::format!("{side}.{i}.res.w"),
                    scaled_normal(&[prev, s], prev, rng),
                )?)
            } else {
                None
            };
            let (att_in, att_out) = match attention_width {
                Some(f) => (
                    Some(Linear::new(store, &alloc::format!("{side}.{i}.att.in"), s, f, rng)?),
                    Some(Linear::new(store, &alloc::format!("{side}.{i}.att.out"), f, s, rng)?),
                ),
                None => (None, None),
            };
            out.push(LayerIds {
                kernel: k,
                conv_w,
                conv_b,
                res,
                att_in,
                att_out,
            });
            prev = s;
        }
    }
    Ok(out)
}

fn first_channels(groups: &[LayerGroup]) -> usize {
    groups.iter().find(|g| g.count > 0).map_or(0, |g| g.channels)
}

fn last_channels(groups: &[LayerGroup]) -> usize {
    groups.iter().rev().find(|g| g.count > 0).map_or(0, |g| g.channels)
}

impl LayerIds {
    fn block(&self, p: &Bound) -> ConvBlock {
        ConvBlock {
            kernel_w: p.var(self.conv_w),
            kernel_b: p.var(self.conv_b),
            width: self.kernel,
            res: self.res.map(|r| p.var(r)),
        }
    }
}

impl<F: Scalar> ConvS2SModel<F> {
    /// Embeddings from `N(0, 0.1²)`, projections and kernels from
    /// `N(0, 1/fan_in)`, biases zero.
    pub fn new(cfg: ConvS2SConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.embed;
        let mut store = ParamStore::new();
        let embed = store.insert("embed", Tensor::normal(&[cfg.vocab, f], 0.1, rng))?;
        let enc_pos = store.insert("enc.pos", Tensor::normal(&[cfg.max_positions, f], 0.1, rng))?;
        let dec_pos = store.insert("dec.pos", Tensor::normal(&[cfg.max_positions, f], 0.1, rng))?;
        let enc_in = Linear::new(&mut store, "enc.in", f, first_channels(&cfg.encoder), rng)?;
        let enc_layers = build_layers(&mut store, "enc", &cfg.encoder, None, rng)?;
        let enc_out = Linear::new(&mut store, "enc.out", last_channels(&cfg.encoder), f, rng)?;
        let dec_in = Linear::new(&mut store, "dec.in", f, first_channels(&cfg.decoder), rng)?;
        let dec_layers = build_layers(&mut store, "dec", &cfg.decoder, Some(f), rng)?;
        let dec_out = Linear::new(&mut store, "dec.out", last_channels(&cfg.decoder), cfg.out_embed, rng)?;
        let out_w = if cfg.tied_output() {
            None
        } else {
            Some(store.insert("out.w", scaled_normal(&[cfg.out_embed, cfg.vocab], cfg.out_embed, rng))?)
        };
        let out_b = store.insert("out.b", Tensor::zeros(&[1, cfg.vocab]))?;
        Ok(ConvS2SModel {
            cfg,
            store,
            ids: ConvIds {
                embed,
                enc_pos,
                dec_pos,
                enc_in,
                enc_layers,
                enc_out,
                dec_in,
                dec_layers,
                dec_out,
                out_w,
                out_b,
            },
        })
    }

    pub fn from_store(cfg: ConvS2SConfig, store: &ParamStore<F>) -> Result<Self> {
        let mut m = Self::new(cfg, &mut rng::seeded(0))?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn config(&self) -> &ConvS2SConfig {
        &self.cfg
    }

    pub fn encode(&self, g: &mut Graph<F>, p: &Bound, src: &[u32], mut rng: Option<&mut Rng>) -> Result<EncoderOut> {
        check_ids(src, self.cfg.vocab, "source")?;
        let faithful = self.cfg.faithful_scaling;
        let z = embed_with_positions(g, p.var(self.ids.embed), p.var(self.ids.enc_pos), src)?;
        let x = dropout(g, z, self.cfg.dropout, rng.as_deref_mut())?;
        let mut x = self.ids.enc_in.apply(g, p, x)?;
        for layer in &self.ids.enc_layers {
            x = conv_block(
                g,
                x,
                &layer.block(p),
                false,
                faithful,
                rng.as_deref_mut(),
                self.cfg.dropout,
            )?;
        }
        let keys = self.ids.enc_out.apply(g, p, x)?;
        let mut values = g.add(keys, z)?;
        if faithful {
            values = g.scale(values, sqrt_half());
        }
        Ok(EncoderOut { keys, values })
    }

    /// Teacher-forced logits `[len(tgt_in)×T]` and per-layer alignments.
    pub fn decode(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        enc: &EncoderOut,
        tgt_in: &[u32],
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, Vec<Var>)> {
        check_ids(tgt_in, self.cfg.vocab, "target prefix")?;
        let faithful = self.cfg.faithful_scaling;
        let gk = embed_with_positions(g, p.var(self.ids.embed), p.var(self.ids.dec_pos), tgt_in)?;
        let x = dropout(g, gk, self.cfg.dropout, rng.as_deref_mut())?;
        let mut x = self.ids.dec_in.apply(g, p, x)?;
        let mut aligns = Vec::with_capacity(self.ids.dec_layers.len());
        for layer in &self.ids.dec_layers {
            let block = layer.block(p);
            let residual = match block.res {
                Some(w) => g.matmul(x, w)?,
                None => x,
            };
            let h = dropout(g, x, self.cfg.dropout, rng.as_deref_mut())?;
            let h = conv1d(g, h, block.kernel_w, block.kernel_b, block.width, Padding::Causal)?;
            let h = glu(g, h)?;
            let (att_in, att_out) = (layer.att_in.expect("decoder"), layer.att_out.expect("decoder"));
            let w = AttentionWeights {
                w_v: p.var(att_in.w),
                b_v: p.var(att_in.b),
                w_out: p.var(att_out.w),
                b_out: p.var(att_out.b),
            };
            let (c, a) = multistep_attention(g, h, gk, enc, &w, faithful)?;
            aligns.push(a);
            let c = g.matmul(c, w.w_out)?;
            let c = g.add_row(c, w.b_out)?;
            let mut h = g.add(h, c)?;
            if faithful {
                h = g.scale(h, sqrt_half());
            }
            x = g.add(h, residual)?;
            if faithful {
                x = g.scale(x, sqrt_half());
            }
        }
        let x = dropout(g, x, self.cfg.dropout, rng.as_deref_mut())?;
        let d = self.ids.dec_out.apply(g, p, x)?;
        let d = dropout(g, d, self.cfg.dropout, rng)?;
        let (w_o, tied) = match self.ids.out_w {
            Some(w) => (p.var(w), false),
            None => (p.var(self.ids.embed), true),
        };
        let logits = convs2s_output(g, d, w_o, p.var(self.ids.out_b), tied)?;
        Ok((logits, aligns))
    }
}

impl<F: Scalar> Seq2Seq<F> for ConvS2SModel<F> {
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
        Some(self.cfg.max_positions)
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
        let (logits, _) = self.decode(g, p, &enc, tgt_in, rng)?;
        Ok(g.log_softmax(logits))
    }
}

/// Encoder outputs plus the target prefix read so far; each step re-runs
/// the causal decoder over the prefix.
#[derive(Clone, Debug)]
pub struct ConvState<F> {
    keys: Arc<Tensor<F>>,
    values: Arc<Tensor<F>>,
    prefix: Vec<u32>,
}

impl<F: Scalar> StepModel for ConvS2SModel<F> {
    type State = ConvState<F>;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn start(&self, src: &[u32]) -> Result<ConvState<F>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &p, src, None)?;
        Ok(ConvState {
            keys: Arc::new(g.value(enc.keys).clone()),
            values: Arc::new(g.value(enc.values).clone()),
            prefix: Vec::new(),
        })
    }

    fn step(&self, state: &ConvState<F>, prev: u32) -> Result<(Vec<f64>, ConvState<F>)> {
        let mut prefix = state.prefix.clone();
        prefix.push(prev);
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let enc = EncoderOut {
            keys: g.constant(Arc::clone(&state.keys)),
            values: g.constant(Arc::clone(&state.values)),
        };
        let (logits, _) = self.decode(&mut g, &p, &enc, &prefix, None)?;
        let last = g.slice_rows(logits, prefix.len() - 1, prefix.len())?;
        let lp = g.log_softmax(last);
        let out = g.value(lp).data().iter().map(|v| v.f64()).collect();
        Ok((
            out,
            ConvState {
                keys: Arc::clone(&state.keys),
                values: Arc::clone(&state.values),
                prefix,
            },
        ))
    }
}
