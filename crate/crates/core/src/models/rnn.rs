//! LSTM encoder-decoder with dot-product (Luong) attention. The first
//! encoder layer is bi-directional; higher layers are uni-directional with
//! residual connections. The decoder feeds the previous attentional state
//! back into its first layer.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{check_ids, Seq2Seq};
use crate::nn::{dropout, lstm_gates, LstmWeights};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::special::RESERVED;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RnnConfig {
    pub vocab: usize,
    pub layers: usize,
    /// Cell size of the uni-directional layers and embedding width. The
    /// bi-directional layer uses `hidden/2` per direction so its
    /// concatenated output is `hidden` wide.
    pub hidden: usize,
    pub dropout: f64,
    pub init_range: f64,
}

impl RnnConfig {
    /// 2 layers of 1024 units, dropout 0.15.
    pub fn baseline(vocab: usize) -> Self {
        RnnConfig {
            vocab,
            layers: 2,
            hidden: 1024,
            dropout: 0.15,
            init_range: 0.08,
        }
    }

    pub fn tiny(vocab: usize) -> Self {
        RnnConfig {
            vocab,
            layers: 2,
            hidden: 64,
            dropout: 0.1,
            init_range: 0.08,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("rnn needs at least one layer".into()));
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return Err(Error::Config(alloc::format!(
                "rnn hidden size {} must be even and >= 2",
                self.hidden
            )));
        }
        if self.vocab <= RESERVED {
            return Err(Error::Config(alloc::format!(
                "vocabulary size {} too small",
                self.vocab
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Trainable parameters implied by the layer sizes.
    pub fn param_count(&self) -> usize {
        let (h, t) = (self.hidden, self.vocab);
        let cell = |input: usize, hidden: usize| input * 4 * hidden + hidden * 4 * hidden + 4 * hidden;
        let upper = (self.layers - 1) * cell(h, h);
        t * h + 2 * cell(h, h / 2) + upper + cell(2 * h, h) + upper + 2 * h * h + h * t
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

impl LstmIds {
    fn bind(&self, p: &Bound) -> LstmWeights {
        LstmWeights {
            w_x: p.var(self.w_x),
            w_h: p.var(self.w_h),
            b: p.var(self.b),
        }
    }
}

#[derive(Clone, Debug)]
struct RnnIds {
    embed: ParamId,
    enc_fwd: LstmIds,
    enc_bwd: LstmIds,
    enc: Vec<LstmIds>,
    dec: Vec<LstmIds>,
    w_c: ParamId,
    w_s: ParamId,
}

#[derive(Clone, Debug)]
pub struct RnnModel<F> {
    cfg: RnnConfig,
    store: ParamStore<F>,
    ids: RnnIds,
}

/// Decoder recurrent state as graph variables: per-layer `h`, `c` and the
/// previous attentional state fed into the first layer.
#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    pub feed: Var,
}

/// Output of one attention step.
#[derive(Clone, Copy, Debug)]
pub struct AttentionStep {
    /// Alignment weights `[1×m]`.
    pub align: Var,
    /// Context vector `[1×hidden]`.
    pub context: Var,
}

/// `a = softmax(h̄ · h_t)`, `c = Σ_s a_s h̄_s` for `h_t: [1×d]`, `enc: [m×d]`.
pub fn luong_attention<F: Scalar>(g: &mut Graph<F>, h_t: Var, enc: Var) -> Result<AttentionStep> {
    let scores = g.matmul_bt(h_t, enc)?;
    let align = g.softmax(scores);
    let context = g.matmul(align, enc)?;
    Ok(AttentionStep { align, context })
}

/// Runs an LSTM over the rows of `xs: [m×in]` and returns `[m×hidden]`
/// outputs in input order.
pub fn lstm_layer<F: Scalar>(g: &mut Graph<F>, xs: Var, w: &LstmWeights, reverse: bool) -> Result<Var> {
    let m = g.value(xs).rows();
    let hidden = g.shape(w.w_h)[0];
    let zx = g.matmul(xs, w.w_x)?;
    let zx = g.add_row(zx, w.b)?;
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, hidden]));
    let mut outs = vec![h; m];
    for step in 0..m {
        let t = if reverse { m - 1 - step } else { step };
        let z_t = g.slice_rows(zx, t, t + 1)?;
        let z_h = g.matmul(h, w.w_h)?;
        let z = g.add(z_t, z_h)?;
        (h, c) = lstm_gates(g, z, c)?;
        outs[t] = h;
    }
    g.concat_rows(&outs)
}

fn lstm_params<F: Scalar>(
    store: &mut ParamStore<F>,
    name: &str,
    input: usize,
    hidden: usize,
    range: f64,
    rng: &mut Rng,
) -> Result<LstmIds> {
    let mut id = |suffix: &str, shape: &[usize], store: &mut ParamStore<F>| {
        let mut n = String::from(name);
        n.push_str(suffix);
        store.insert(&n, Tensor::uniform(shape, range, rng))
    };
    Ok(LstmIds {
        w_x: id(".w_x", &[input, 4 * hidden], store)?,
        w_h: id(".w_h", &[hidden, 4 * hidden], store)?,
        b: id(".b", &[1, 4 * hidden], store)?,
    })
}

impl<F: Scalar> RnnModel<F> {
    /// Builds the model with all weights drawn from `uniform(−r, r)`.
    pub fn new(cfg: RnnConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (h, r) = (cfg.hidden, cfg.init_range);
        let mut store = ParamStore::new();
        let embed = store.insert("embed", Tensor::uniform(&[cfg.vocab, h], r, rng))?;
        let enc_fwd = lstm_params(&mut store, "enc.0.fwd", h, h / 2, r, rng)?;
        let enc_bwd = lstm_params(&mut store, "enc.0.bwd", h, h / 2, r, rng)?;
        let mut enc = Vec::new();
        for i in 1..cfg.layers {
            enc.push(lstm_params(&mut store, &alloc::format!("enc.{i}"), h, h, r, rng)?);
        }
        let mut dec = Vec::new();
        for i in 0..cfg.layers {
            let input = if i == 0 { 2 * h } else { h };
            dec.push(lstm_params(&mut store, &alloc::format!("dec.{i}"), input, h, r, rng)?);
        }
        let w_c = store.insert("att.w_c", Tensor::uniform(&[2 * h, h], r, rng))?;
        let w_s = store.insert("out.w_s", Tensor::uniform(&[h, cfg.vocab], r, rng))?;
        Ok(RnnModel {
            cfg,
            store,
            ids: RnnIds {
                embed,
                enc_fwd,
                enc_bwd,
                enc,
                dec,
                w_c,
                w_s,
            },
        })
    }

    /// Builds the model layout and copies weights from `store`.
    pub fn from_store(cfg: RnnConfig, store: &ParamStore<F>) -> Result<Self> {
        let mut m = Self::new(cfg, &mut rng::seeded(0))?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn config(&self) -> &RnnConfig {
        &self.cfg
    }

    /// Top-layer encoder states `[m×hidden]`. Row `i` of the first layer is
    /// `[→h_i, ←h_i]`.
    pub fn encode(&self, g: &mut Graph<F>, p: &Bound, src: &[u32], mut rng: Option<&mut Rng>) -> Result<Var> {
        check_ids(src, self.cfg.vocab, "source")?;
        let x = g.gather(p.var(self.ids.embed), src)?;
        let x = dropout(g, x, self.cfg.dropout, rng.as_deref_mut())?;
        let fwd = lstm_layer(g, x, &self.ids.enc_fwd.bind(p), false)?;
        let bwd = lstm_layer(g, x, &self.ids.enc_bwd.bind(p), true)?;
        let mut out = g.concat_cols(&[fwd, bwd])?;
        for layer in &self.ids.enc {
            let x = dropout(g, out, self.cfg.dropout, rng.as_deref_mut())?;
            let y = lstm_layer(g, x, &layer.bind(p), false)?;
            out = g.add(y, out)?;
        }
        Ok(out)
    }

    pub fn initial_decoder(&self, g: &mut Graph<F>) -> DecoderVars {
        let h = self.cfg.hidden;
        let zero = |g: &mut Graph<F>| g.constant(Tensor::zeros(&[1, h]));
        DecoderVars {
            h: (0..self.cfg.layers).map(|_| zero(g)).collect(),
            c: (0..self.cfg.layers).map(|_| zero(g)).collect(),
            feed: zero(g),
        }
    }

    /// Reads `y_prev` and returns the next-token logits `[1×T]`, the new
    /// decoder state and the attention step.
    pub fn decode_step(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        enc: Var,
        state: &DecoderVars,
        y_prev: u32,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, DecoderVars, AttentionStep)> {
        check_ids(&[y_prev], self.cfg.vocab, "target")?;
        let emb = g.gather(p.var(self.ids.embed), &[y_prev])?;
        let mut x = g.concat_cols(&[emb, state.feed])?;
        let mut next = DecoderVars {
            h: Vec::with_capacity(self.cfg.layers),
            c: Vec::with_capacity(self.cfg.layers),
            feed: state.feed,
        };
        for (i, layer) in self.ids.dec.iter().enumerate() {
            let w = layer.bind(p);
            let xin = dropout(g, x, self.cfg.dropout, rng.as_deref_mut())?;
            let zx = g.matmul(xin, w.w_x)?;
            let zh = g.matmul(state.h[i], w.w_h)?;
            let z = g.add(zx, zh)?;
            let z = g.add_row(z, w.b)?;
            let (h, c) = lstm_gates(g, z, state.c[i])?;
            next.h.push(h);
            next.c.push(c);
            x = if i == 0 { h } else { g.add(h, x)? };
        }
        let att = luong_attention(g, x, enc)?;
        let cat = g.concat_cols(&[att.context, x])?;
        let pre = g.matmul(cat, p.var(self.ids.w_c))?;
        let h_tilde = g.tanh(pre);
        next.feed = h_tilde;
        let out = dropout(g, h_tilde, self.cfg.dropout, rng)?;
        let logits = g.matmul(out, p.var(self.ids.w_s))?;
        Ok((logits, next, att))
    }
}

impl<F: Scalar> Seq2Seq<F> for RnnModel<F> {
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
        check_ids(tgt_in, self.cfg.vocab, "target prefix")?;
        let enc = self.encode(g, p, src, rng.as_deref_mut())?;
        let mut state = self.initial_decoder(g);
        let mut rows = Vec::with_capacity(tgt_in.len());
        for &y in tgt_in {
            let (logits, next, _) = self.decode_step(g, p, enc, &state, y, rng.as_deref_mut())?;
            rows.push(logits);
            state = next;
        }
        let logits = g.concat_rows(&rows)?;
        Ok(g.log_softmax(logits))
    }
}

/// Incremental decoding state: encoder outputs plus the recurrent state.
#[derive(Clone, Debug)]
pub struct RnnState<F> {
    enc: Arc<Tensor<F>>,
    h: Vec<Tensor<F>>,
    c: Vec<Tensor<F>>,
    feed: Tensor<F>,
}

impl<F: Scalar> StepModel for RnnModel<F> {
    type State = RnnState<F>;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn start(&self, src: &[u32]) -> Result<RnnState<F>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &p, src, None)?;
        let zero = Tensor::zeros(&[1, self.cfg.hidden]);
        Ok(RnnState {
            enc: Arc::new(g.value(enc).clone()),
            h: vec![zero.clone(); self.cfg.layers],
            c: vec![zero.clone(); self.cfg.layers],
            feed: zero,
        })
    }

    fn step(&self, state: &RnnState<F>, prev: u32) -> Result<(Vec<f64>, RnnState<F>)> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let enc = g.constant(Arc::clone(&state.enc));
        let vars = DecoderVars {
            h: state.h.iter().map(|t| g.constant(t.clone())).collect(),
            c: state.c.iter().map(|t| g.constant(t.clone())).collect(),
            feed: g.constant(state.feed.clone()),
        };
        let (logits, next, _) = self.decode_step(&mut g, &p, enc, &vars, prev, None)?;
        let lp = g.log_softmax(logits);
        let out = g.value(lp).data().iter().map(|v| v.f64()).collect();
        let state = RnnState {
            enc: Arc::clone(&state.enc),
            h: next.h.iter().map(|&v| g.value(v).clone()).collect(),
            c: next.c.iter().map(|&v| g.value(v).clone()).collect(),
            feed: g.value(next.feed).clone(),
        };
        Ok((out, state))
    }
}
