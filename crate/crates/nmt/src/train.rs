//! The training loop: token-budget batches, per-sentence gradients computed
//! in parallel and summed in a fixed order, clipping, scheduled updates and
//! periodic checkpoints.

use std::time::Instant;

use rayon::prelude::*;

use nmt_core::decoding::greedy;
use nmt_core::evaluation::corpus_bleu;
use nmt_core::models::{sequence_log_likelihood, Model, Seq2Seq};
use nmt_core::rng;
use nmt_core::training::{
    clip_gradients, epochs_from_steps, pair_cost, pair_gradients, plan_batches, LengthMode, Optimizer,
};
use nmt_core::{ParamGrads, ParamStore};

use crate::config::{ExperimentConfig, GradNorm};
use crate::error::Result;

/// Token ids of one sentence pair, without start or end markers.
pub type Pair = (Vec<u32>, Vec<u32>);

/// Validation pairs with the reference text BLEU is computed against.
pub struct ValidSet<'a> {
    pub pairs: &'a [Pair],
    pub references: &'a [String],
    /// Turns output ids into text comparable with the references.
    pub render: &'a (dyn Fn(&[u32]) -> String + Sync),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    /// Mean per-token loss over the steps since the previous row.
    pub loss: f64,
    pub tokens_per_sec: f64,
}

pub struct CheckpointEvent<'a> {
    pub step: u64,
    pub epoch: f64,
    pub store: &'a ParamStore<f32>,
    pub valid_loss: f64,
    pub valid_bleu: f64,
}

pub enum Event<'a> {
    Log(LogRow),
    Checkpoint(CheckpointEvent<'a>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    MaxEpochs,
    /// The annealed learning rate fell below its floor.
    Annealed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: f64,
    pub stop: StopReason,
}

/// Worker count from `NMT_THREADS`, defaulting to all cores.
pub fn thread_count() -> usize {
    std::env::var("NMT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn truncate(pair: &Pair, mode: LengthMode, max_length: usize) -> Pair {
    match mode {
        LengthMode::Truncate => (
            pair.0[..pair.0.len().min(max_length)].to_vec(),
            pair.1[..pair.1.len().min(max_length)].to_vec(),
        ),
        LengthMode::Exclude => pair.clone(),
    }
}

/// Per-token negative log-likelihood and greedy BLEU on `valid`.
pub fn evaluate(model: &Model<f32>, cfg: &ExperimentConfig, valid: &ValidSet<'_>) -> Result<(f64, f64)> {
    let scored: Vec<Result<(f64, usize, String)>> = valid
        .pairs
        .par_iter()
        .map(|(src, tgt)| {
            let ll = sequence_log_likelihood(model, src, tgt)?;
            let hyp = greedy(model, src, cfg.output_limit(src.len()))?;
            Ok((-ll, tgt.len() + 1, (valid.render)(&hyp)))
        })
        .collect();
    let mut nll = 0.0;
    let mut tokens = 0;
    let mut hyps = Vec::with_capacity(scored.len());
    for r in scored {
        let (l, n, h) = r?;
        nll += l;
        tokens += n;
        hyps.push(h);
    }
    let bleu = corpus_bleu(&hyps, valid.references, true)?.bleu;
    Ok((nll / tokens.max(1) as f64, bleu))
}

/// Trains `model` in place. `observe` receives log rows and checkpoints.
pub fn train(
    cfg: &ExperimentConfig,
    model: &mut Model<f32>,
    pairs: &[Pair],
    valid: Option<&ValidSet<'_>>,
    observe: &mut dyn FnMut(Event<'_>) -> Result<()>,
) -> Result<TrainSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .expect("thread pool");
    let lengths: Vec<(usize, usize)> = pairs.iter().map(|(s, t)| (s.len(), t.len())).collect();
    let corpus_tokens: usize = lengths.iter().map(|&(s, t)| pair_cost(s, t).min(cfg.max_length)).sum();
    let schedule = cfg.schedule();
    let mut optimizer = Optimizer::new(cfg.optimizer.kind(), model.store());
    let mut step = 0u64;
    let mut last_saved = 0u64;
    let mut window = (0.0f64, 0usize, Instant::now());
    let epochs_at = |step: u64| epochs_from_steps(step, cfg.batch_size, corpus_tokens);

    let checkpoint = |model: &Model<f32>, step: u64, observe: &mut dyn FnMut(Event<'_>) -> Result<()>| -> Result<()> {
        let (valid_loss, valid_bleu) = match valid {
            Some(v) if !v.pairs.is_empty() => pool.install(|| evaluate(model, cfg, v))?,
            _ => (f64::NAN, f64::NAN),
        };
        observe(Event::Checkpoint(CheckpointEvent {
            step,
            epoch: epochs_at(step),
            store: model.store(),
            valid_loss,
            valid_bleu,
        }))
    };

    let mut epoch = 1u32;
    let stop = 'outer: loop {
        let shuffle = rng::derive_seed(cfg.seed, &[0x5348_5546, epoch as u64]);
        let plan = plan_batches(&lengths, cfg.batch_size, cfg.max_length, cfg.length_mode, Some(shuffle))?;
        for batch in &plan.batches {
            let Some(lr) = schedule.lr(step + 1, epoch) else {
                break 'outer StopReason::Annealed;
            };
            let m: &Model<f32> = model;
            let results: Vec<nmt_core::Result<(f64, ParamGrads<f32>, usize)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let pair = truncate(&pairs[i], cfg.length_mode, cfg.max_length);
                        let mut r = rng::derive(cfg.seed, &[step + 1, i as u64]);
                        pair_gradients(m, &pair.0, &pair.1, cfg.label_smoothing, Some(&mut r))
                    })
                    .collect()
            });
            let mut total = ParamGrads::zeros_like(model.store());
            let (mut loss, mut tokens) = (0.0, 0usize);
            for r in results {
                let (l, g, n) = r?;
                total.add_assign(&g);
                loss += l;
                tokens += n;
            }
            let divisor = match cfg.grad_norm {
                GradNorm::Sentences => batch.len(),
                GradNorm::Tokens => tokens,
            };
            total.scale(1.0 / divisor.max(1) as f32);
            if cfg.clip_norm > 0.0 {
                clip_gradients(&mut total, cfg.clip_norm)?;
            }
            optimizer.step(model.store_mut(), &total, lr);
            step += 1;
            window.0 += loss;
            window.1 += tokens;

            if step.is_multiple_of(cfg.log_every) {
                let secs = window.2.elapsed().as_secs_f64().max(1e-9);
                observe(Event::Log(LogRow {
                    step,
                    lr,
                    loss: window.0 / window.1.max(1) as f64,
                    tokens_per_sec: window.1 as f64 / secs,
                }))?;
                window = (0.0, 0, Instant::now());
            }
            if step.is_multiple_of(cfg.save_every) {
                checkpoint(model, step, observe)?;
                last_saved = step;
            }
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'outer StopReason::MaxSteps;
            }
        }
        if epoch >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        epoch += 1;
    };
    if step > 0 && last_saved != step {
        checkpoint(model, step, observe)?;
    }
    Ok(TrainSummary {
        steps: step,
        epochs: epochs_at(step),
        stop,
    })
}
