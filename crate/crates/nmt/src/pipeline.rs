//! The file-level steps behind each command.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use nmt_core::corpus::clean::{Filter, FilterPipeline, FilterReport};
use nmt_core::corpus::{decode_bpe, learn_bpe, BpeCodes, Vocabulary};
use nmt_core::decoding::{beam_search, BeamOutput, PenaltyConfig, PenaltyKind};
use nmt_core::models::{Model, ModelConfig};
use nmt_core::rng;
use nmt_core::training::{average_checkpoints, select_ensemble_checkpoints};
use nmt_core::ParamStore;

use crate::config::ExperimentConfig;
use crate::error::{config_error, Error, Result};
use crate::files::{self, load_checkpoint, read_lines, save_checkpoint, write_atomic, write_lines};
use crate::run::{self, CheckpointInfo, RunDir};
use crate::train::{self, Event, Pair, TrainSummary, ValidSet};

const BUNDLED_ENGLISH: &str = include_str!("../assets/english-wordnet-3.0.txt");

fn word_set(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// English word list: the configured file, or the bundled WordNet lemmas.
pub fn english_words(cfg: &ExperimentConfig) -> Result<BTreeSet<String>> {
    if cfg.english_words.is_empty() {
        Ok(word_set(BUNDLED_ENGLISH))
    } else {
        Ok(word_set(&files::read_text(Path::new(&cfg.english_words))?))
    }
}

/// Zero-based pair indices, one per line.
pub fn read_exclusions(path: &Path) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.insert(t.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected a pair index, got `{t}`"),
        })?);
    }
    Ok(out)
}

pub fn raw_path(cfg: &ExperimentConfig, split: &str, lang: &str) -> PathBuf {
    cfg.data_dir.join(format!("{split}.{lang}"))
}

pub fn filter_pipeline(cfg: &ExperimentConfig) -> Result<FilterPipeline> {
    let mut filters = vec![Filter::Empty];
    if cfg.clean {
        filters.push(Filter::Untranslated {
            side: cfg.vi_side,
            english: english_words(cfg)?,
        });
        filters.push(Filter::NotVietnamese {
            side: cfg.vi_side,
            thresholds: cfg.language_thresholds(),
        });
    }
    if !cfg.exclude_list.is_empty() {
        filters.push(Filter::Exclude(read_exclusions(Path::new(&cfg.exclude_list))?));
    }
    Ok(FilterPipeline::new(filters))
}

const SHARD: usize = 4096;

/// Runs the filters over line-range shards in parallel; the merged report
/// equals a sequential run.
pub fn run_filters(pipeline: &FilterPipeline, src: &[String], tgt: &[String]) -> Result<FilterReport> {
    if src.len() != tgt.len() {
        return Err(config_error(format!(
            "unaligned corpus: {} source lines vs {} target lines",
            src.len(),
            tgt.len()
        )));
    }
    let starts: Vec<usize> = (0..src.len()).step_by(SHARD).collect();
    let parts: Vec<Result<FilterReport>> = starts
        .par_iter()
        .map(|&a| {
            let b = (a + SHARD).min(src.len());
            Ok(pipeline.run_range(&src[a..b], &tgt[a..b], a)?)
        })
        .collect();
    let mut report = pipeline.run_range::<String>(&[], &[], 0)?;
    for p in parts {
        report = report.merge(p?);
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct PreprocessReport {
    pub filter: FilterReport,
    pub input_pairs: usize,
    pub merges: usize,
    pub vocab: usize,
}

/// Cleans the training split, learns shared subwords, builds the vocabulary
/// and writes segmented splits into the run directory.
pub fn preprocess(cfg: &ExperimentConfig) -> Result<PreprocessReport> {
    let run = RunDir::new(&cfg.run_dir);
    let _lock = run.lock()?;
    write_atomic(&run.resolved_config(), cfg.to_text().as_bytes())?;

    let src = read_lines(&raw_path(cfg, &cfg.train_split, &cfg.src_lang))?;
    let tgt = read_lines(&raw_path(cfg, &cfg.train_split, &cfg.tgt_lang))?;
    let report = run_filters(&filter_pipeline(cfg)?, &src, &tgt)?;
    if report.kept.is_empty() {
        return Err(nmt_core::Error::EmptyCorpus.into());
    }
    let src = report.select(&src);
    let tgt = report.select(&tgt);

    let codes = learn_bpe(src.iter().chain(&tgt).map(String::as_str), cfg.bpe_merges);
    let segment = |lines: &[String]| -> Vec<String> { lines.par_iter().map(|l| codes.apply_line(l)).collect() };
    let (src_seg, tgt_seg) = (segment(&src), segment(&tgt));
    let vocab = Vocabulary::build(src_seg.iter().chain(&tgt_seg).map(String::as_str), &codes);

    write_atomic(&run.codes(), codes.to_text().as_bytes())?;
    write_atomic(&run.vocab(), vocab.to_text().as_bytes())?;
    write_lines(&run.data(&cfg.train_split, &cfg.src_lang), &src_seg)?;
    write_lines(&run.data(&cfg.train_split, &cfg.tgt_lang), &tgt_seg)?;

    let vs = raw_path(cfg, &cfg.valid_split, &cfg.src_lang);
    let vt = raw_path(cfg, &cfg.valid_split, &cfg.tgt_lang);
    if vs.exists() && vt.exists() {
        let (a, b) = (read_lines(&vs)?, read_lines(&vt)?);
        if a.len() != b.len() {
            return Err(config_error(format!(
                "unaligned validation split: {} vs {} lines",
                a.len(),
                b.len()
            )));
        }
        write_lines(&run.data(&cfg.valid_split, &cfg.src_lang), &segment(&a))?;
        write_lines(&run.data(&cfg.valid_split, &cfg.tgt_lang), &segment(&b))?;
    }
    Ok(PreprocessReport {
        input_pairs: report.kept.len() + report.removed.iter().map(|r| r.1).sum::<usize>(),
        filter: report,
        merges: codes.len(),
        vocab: vocab.len(),
    })
}

/// Vocabulary, subword codes and the model layout of a preprocessed run.
pub struct RunAssets {
    pub run: RunDir,
    pub vocab: Vocabulary,
    pub codes: BpeCodes,
    pub model: ModelConfig,
}

pub fn load_assets(cfg: &ExperimentConfig) -> Result<RunAssets> {
    let run = RunDir::new(&cfg.run_dir);
    let vocab = Vocabulary::from_text(&files::read_text(&run.vocab())?)?;
    let codes = BpeCodes::from_text(&files::read_text(&run.codes())?)?;
    let mut model = cfg.model.clone();
    model.set_vocab(vocab.len());
    model.validate()?;
    Ok(RunAssets {
        run,
        vocab,
        codes,
        model,
    })
}

fn encode_split(
    run: &RunDir,
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    split: &str,
) -> Result<Option<(Vec<Pair>, Vec<String>)>> {
    let (s, t) = (run.data(split, &cfg.src_lang), run.data(split, &cfg.tgt_lang));
    if !s.exists() || !t.exists() {
        return Ok(None);
    }
    let (src, tgt) = (read_lines(&s)?, read_lines(&t)?);
    let mut pairs = Vec::new();
    let mut refs = Vec::new();
    for (a, b) in src.iter().zip(&tgt) {
        let (x, y) = (vocab.encode(a), vocab.encode(b));
        if !x.is_empty() && !y.is_empty() {
            pairs.push((x, y));
            refs.push(decode_bpe(b));
        }
    }
    Ok(Some((pairs, refs)))
}

/// Trains from the preprocessed run directory, writing checkpoints,
/// metadata and the training log. Runs [`preprocess`] first when the run directory has no vocabulary.
pub fn train_run(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    if !RunDir::new(&cfg.run_dir).vocab().exists() {
        preprocess(cfg)?;
    }
    let assets = load_assets(cfg)?;
    let run = &assets.run;
    let _lock = run.lock()?;
    write_atomic(&run.resolved_config(), cfg.to_text().as_bytes())?;
    let (pairs, _) = encode_split(run, cfg, &assets.vocab, &cfg.train_split)?.unwrap_or_default();
    if pairs.is_empty() {
        return Err(nmt_core::Error::EmptyCorpus.into());
    }
    let valid = encode_split(run, cfg, &assets.vocab, &cfg.valid_split)?;
    let render = |ids: &[u32]| decode_bpe(&assets.vocab.decode(ids));
    let valid_set = valid.as_ref().map(|(p, r)| ValidSet {
        pairs: p,
        references: r,
        render: &render,
    });

    let mut model: Model<f32> = assets.model.build(&mut rng::derive(cfg.seed, &[0x1417]))?;
    let ckpt = run.ckpt_dir();
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    for old in [run.metadata(), run.train_log()] {
        if old.exists() {
            fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
    }
    let mut log = String::from("step\tlr\tloss\ttokens_per_sec\n");
    write_atomic(&run.train_log(), log.as_bytes())?;
    let mut observe = |ev: Event<'_>| -> Result<()> {
        match ev {
            Event::Log(r) => {
                log.push_str(&format!(
                    "{}\t{:.6e}\t{:.6}\t{:.1}\n",
                    r.step, r.lr, r.loss, r.tokens_per_sec
                ));
                write_atomic(&run.train_log(), log.as_bytes())
            }
            Event::Checkpoint(c) => {
                save_checkpoint(&run.checkpoint(c.step), c.store)?;
                run::append_metadata(
                    &run.metadata(),
                    &CheckpointInfo {
                        step: c.step,
                        epoch: c.epoch,
                        valid_loss: c.valid_loss,
                        valid_bleu: c.valid_bleu,
                    },
                )?;
                prune_checkpoints(&ckpt, cfg.keep_checkpoints)
            }
        }
    };
    train::train(cfg, &mut model, &pairs, valid_set.as_ref(), &mut observe)
}

/// Keeps the newest `keep` checkpoints.
fn prune_checkpoints(dir: &Path, keep: usize) -> Result<()> {
    let steps = run::list_checkpoints(dir)?;
    for &s in steps.iter().take(steps.len().saturating_sub(keep)) {
        let p = run::checkpoint_path(dir, s);
        fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// The averaged checkpoint when present, otherwise the retained checkpoint
/// with the best validation BLEU, otherwise the newest.
pub fn default_checkpoint(run: &RunDir) -> Result<PathBuf> {
    let averaged = run.ckpt_dir().join("averaged.nmtf");
    if averaged.exists() {
        return Ok(averaged);
    }
    let steps = run::list_checkpoints(&run.ckpt_dir())?;
    let meta = if run.metadata().exists() {
        run::read_metadata(&run.metadata())?
    } else {
        Vec::new()
    };
    let best = meta
        .iter()
        .filter(|m| m.valid_bleu.is_finite() && steps.contains(&m.step))
        .max_by(|a, b| a.valid_bleu.total_cmp(&b.valid_bleu).then(a.step.cmp(&b.step)))
        .map(|m| m.step);
    best.or_else(|| steps.last().copied())
        .map(|s| run.checkpoint(s))
        .ok_or_else(|| Error::Usage(format!("no checkpoints in {}", run.ckpt_dir().display())))
}

pub struct Translator {
    pub assets: RunAssets,
    pub model: Model<f32>,
}

#[derive(Clone, Debug)]
pub struct Translation {
    /// Detokenized hypotheses, best first, with their scores.
    pub nbest: Vec<(String, f64)>,
    pub truncated: bool,
    pub output_tokens: usize,
}

impl Translator {
    pub fn open(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Self> {
        let assets = load_assets(cfg)?;
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => default_checkpoint(&assets.run)?,
        };
        let store = load_checkpoint(&path)?;
        let model = assets.model.load(&store)?;
        Ok(Translator { assets, model })
    }

    /// `max_output_len` of 0 allows `2·source + 10` subwords.
    pub fn translate(&self, line: &str, penalty: &PenaltyConfig, max_output_len: usize) -> Result<Translation> {
        let src = self.assets.vocab.encode(&self.assets.codes.apply_line(line));
        if src.is_empty() {
            return Ok(Translation {
                nbest: vec![(String::new(), 0.0)],
                truncated: false,
                output_tokens: 0,
            });
        }
        let limit = if max_output_len > 0 {
            max_output_len
        } else {
            2 * src.len() + 10
        };
        let out: BeamOutput = beam_search(&self.model, &src, penalty, limit)?;
        let render = |ids: &[u32]| decode_bpe(&self.assets.vocab.decode(ids));
        let output_tokens = out.best().tokens.len();
        Ok(Translation {
            nbest: out.nbest.iter().map(|(h, s)| (render(&h.tokens), *s)).collect(),
            truncated: out.truncated,
            output_tokens,
        })
    }

    /// Translates every line in parallel, preserving order. Returns the
    /// translations and the generated subword tokens per second.
    pub fn translate_all(
        &self,
        lines: &[String],
        cfg: &ExperimentConfig,
        penalty: &PenaltyConfig,
    ) -> Result<(Vec<Translation>, f64)> {
        let start = Instant::now();
        let out: Vec<Result<Translation>> = lines
            .par_iter()
            .map(|l| self.translate(l, penalty, cfg.max_output_len))
            .collect();
        let out: Vec<Translation> = out.into_iter().collect::<Result<_>>()?;
        let tokens: usize = out.iter().map(|t| t.output_tokens).sum();
        Ok((out, tokens as f64 / start.elapsed().as_secs_f64().max(1e-9)))
    }
}

/// Averages `n` checkpoints of `dir` spaced `interval` epochs apart, using
/// the step/epoch ratio recorded in `metadata.tsv`.
pub fn average_dir(dir: &Path, n: usize, interval: f64) -> Result<(Vec<u64>, ParamStore<f32>)> {
    let available = run::list_checkpoints(dir)?;
    let meta = run::read_metadata(&dir.join("metadata.tsv")).unwrap_or_default();
    let steps_per_epoch = meta
        .iter()
        .rev()
        .find(|m| m.epoch > 0.0)
        .map(|m| m.step as f64 / m.epoch)
        .ok_or_else(|| Error::Usage(format!("{}: metadata.tsv has no epoch information", dir.display())))?;
    let chosen = select_ensemble_checkpoints(
        &available,
        nmt_core::training::EnsembleSpec { n, interval },
        steps_per_epoch,
    )?;
    let stores: Vec<ParamStore<f32>> = chosen
        .iter()
        .map(|&s| load_checkpoint(&run::checkpoint_path(dir, s)))
        .collect::<Result<_>>()?;
    Ok((chosen, average_checkpoints(&stores)?))
}

/// Averages explicitly listed checkpoint files.
pub fn average_files(paths: &[PathBuf]) -> Result<ParamStore<f32>> {
    let stores: Vec<ParamStore<f32>> = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    Ok(average_checkpoints(&stores)?)
}

/// `start:end:step` inclusive of `end` up to rounding.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Usage(format!("expected start:end:step, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [a, b, s] = parts[..] else { return Err(bad()) };
    if !(s > 0.0) || b < a {
        return Err(bad());
    }
    let n = ((b - a) / s + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((a + i as f64 * s) * 1e9).round() / 1e9).collect())
}

/// BLEU on the validation split for each `α` under both penalty forms.
pub fn tune_alpha(cfg: &ExperimentConfig, checkpoint: Option<&Path>, alphas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let t = Translator::open(cfg, checkpoint)?;
    let src = read_lines(&raw_path(cfg, &cfg.valid_split, &cfg.src_lang))?;
    let refs = read_lines(&raw_path(cfg, &cfg.valid_split, &cfg.tgt_lang))?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let mut bleu = [0.0; 2];
        for (slot, kind) in [PenaltyKind::F1, PenaltyKind::F2].into_iter().enumerate() {
            let pc = PenaltyConfig::new(kind, a, cfg.beam_size)?;
            let (out, _) = t.translate_all(&src, cfg, &pc)?;
            let hyps: Vec<String> = out.into_iter().map(|o| o.nbest[0].0.clone()).collect();
            bleu[slot] = nmt_core::evaluation::corpus_bleu(&hyps, &refs, false)?.bleu;
        }
        rows.push((a, bleu[0], bleu[1]));
    }
    Ok(rows)
}
