//! Beam search with length normalization, shared by every model family.

use alloc::vec::Vec;

use core::cmp::Ordering;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::special::{BOS, EOS};

/// A model that can be advanced one target token at a time.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Encodes the source and returns the decoder state before any target
    /// token has been read.
    fn start(&self, src: &[u32]) -> Result<Self::State>;

    /// Reads `prev` and returns log-probabilities of the next token.
    fn step(&self, state: &Self::State, prev: u32) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyKind {
    /// `((5+|Y|)/6)^α`
    F1,
    /// `(1+|Y|)^α`
    F2,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub alpha: f64,
    pub beam: usize,
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind, alpha: f64, beam: usize) -> Result<Self> {
        if beam == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Config(alloc::format!(
                "length penalty alpha {alpha} must be >= 0"
            )));
        }
        Ok(PenaltyConfig { kind, alpha, beam })
    }
}

pub fn length_penalty(length: usize, cfg: &PenaltyConfig) -> f64 {
    let len = length as f64;
    match cfg.kind {
        PenaltyKind::F1 => Float::powf((5.0 + len) / 6.0, cfg.alpha),
        PenaltyKind::F2 => Float::powf(1.0 + len, cfg.alpha),
        PenaltyKind::None => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends with the end marker when finished.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

/// Log-probability divided by the length penalty of `|Y|`.
pub fn score(h: &Hypothesis, cfg: &PenaltyConfig) -> f64 {
    h.log_prob / length_penalty(h.tokens.len(), cfg)
}

#[derive(Clone, Debug)]
pub struct BeamOutput {
    /// Finished hypotheses, best first, with their scores. When nothing
    /// finished this holds the best live hypothesis instead.
    pub nbest: Vec<(Hypothesis, f64)>,
    /// No hypothesis emitted the end marker within the length limit.
    pub truncated: bool,
}

impl BeamOutput {
    pub fn best(&self) -> &Hypothesis {
        &self.nbest[0].0
    }

    /// Best output without the end marker.
    pub fn best_tokens(&self) -> &[u32] {
        let t = &self.best().tokens;
        match t.last() {
            Some(&EOS) => &t[..t.len() - 1],
            _ => t,
        }
    }
}

/// Descending score, then ascending token sequence.
fn rank(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    let (sa, sb) = (nan_low(a.0), nan_low(b.0));
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

fn nan_low(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Beam search keeping the `cfg.beam` best live hypotheses by raw
/// log-probability; finished hypotheses are ranked by [`score`].
pub fn beam_search<M: StepModel>(
    model: &M,
    src: &[u32],
    cfg: &PenaltyConfig,
    max_output_len: usize,
) -> Result<BeamOutput> {
    let b = cfg.beam.max(1);
    let vocab = model.vocab_size();
    let mut live = alloc::vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: model.start(src)?,
    }];
    let mut finished: Vec<(Hypothesis, f64)> = Vec::new();
    let best_penalty = length_penalty(max_output_len, cfg);

    for _ in 0..max_output_len {
        // (parent, token, log_prob, next state)
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (pi, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(BOS);
            let (lp, next) = model.step(&l.state, prev)?;
            if lp.len() != vocab {
                return Err(Error::contract("step returned a distribution of the wrong size"));
            }
            let mut order: Vec<u32> = (0..vocab as u32).collect();
            order.sort_by(|&x, &y| {
                nan_low(lp[y as usize])
                    .partial_cmp(&nan_low(lp[x as usize]))
                    .unwrap_or(Ordering::Equal)
                    .then(x.cmp(&y))
            });
            for &tok in order.iter().take(b) {
                candidates.push((pi, tok, l.hyp.log_prob + lp[tok as usize]));
            }
            states.push(next);
        }
        let seq = |c: &(usize, u32, f64)| {
            let mut t = live[c.0].hyp.tokens.clone();
            t.push(c.1);
            t
        };
        let mut keyed: Vec<(Vec<u32>, usize, u32, f64)> = candidates.iter().map(|c| (seq(c), c.0, c.1, c.2)).collect();
        keyed.sort_by(|a, b| rank((a.3, &a.0), (b.3, &b.0)));

        let mut next_live = Vec::with_capacity(b);
        for (tokens, parent, tok, log_prob) in keyed.into_iter().take(b) {
            if tok == EOS {
                let h = Hypothesis {
                    tokens,
                    log_prob,
                    finished: true,
                };
                let s = score(&h, cfg);
                finished.push((h, s));
            } else {
                next_live.push(Live {
                    hyp: Hypothesis {
                        tokens,
                        log_prob,
                        finished: false,
                    },
                    state: states[parent].clone(),
                });
            }
        }
        live = next_live;
        finished.sort_by(|a, b| rank((a.1, &a.0.tokens), (b.1, &b.0.tokens)));

        if live.is_empty() {
            break;
        }
        if finished.len() >= b {
            let worst = finished[b - 1].1;
            let best_live = live[0].hyp.log_prob;
            let bound = if cfg.kind == PenaltyKind::None {
                best_live
            } else {
                best_live / best_penalty
            };
            if bound <= worst {
                break;
            }
        }
    }

    if finished.is_empty() {
        let h = live
            .into_iter()
            .map(|l| l.hyp)
            .min_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
            .unwrap_or(Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                finished: false,
            });
        let s = score(&h, cfg);
        return Ok(BeamOutput {
            nbest: alloc::vec![(h, s)],
            truncated: true,
        });
    }
    Ok(BeamOutput {
        nbest: finished,
        truncated: false,
    })
}

/// Argmax decoding, one token per step.
pub fn greedy<M: StepModel>(model: &M, src: &[u32], max_output_len: usize) -> Result<Vec<u32>> {
    let mut state = model.start(src)?;
    let mut out = Vec::new();
    let mut prev = BOS;
    for _ in 0..max_output_len {
        let (lp, next) = model.step(&state, prev)?;
        let mut best = 0usize;
        for (i, &v) in lp.iter().enumerate() {
            if nan_low(v) > nan_low(lp[best]) {
                best = i;
            }
        }
        let tok = best as u32;
        if tok == EOS {
            break;
        }
        out.push(tok);
        prev = tok;
        state = next;
    }
    Ok(out)
}
