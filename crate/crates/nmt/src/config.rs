//! Experiment configuration files.
//!
//! A config is a flat list of `key = value` (or `key: value`) lines; `#`
//! starts a comment line. The `preset` key is required and expands to a
//! complete set of defaults, which the remaining keys then override.
//! Unknown keys, duplicate keys and badly typed values are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nmt_core::corpus::clean::{LanguageThresholds, Side};
use nmt_core::decoding::{PenaltyConfig, PenaltyKind};
use nmt_core::models::{ConvS2SConfig, LayerGroup, ModelConfig, RnnConfig, TransformerConfig};
use nmt_core::training::{EnsembleSpec, LengthMode, OptimizerKind, Schedule};

use crate::error::{config_error, Error, Result};

/// Vocabulary size assumed by presets until a real vocabulary is known.
pub const REFERENCE_VOCAB: usize = 20_000;

pub const PRESETS: [&str; 13] = [
    "rnn_baseline",
    "rnn_tiny",
    "B_base_table",
    "B_base_text",
    "B_1",
    "B_2",
    "B_3",
    "convs2s_tiny",
    "C_base",
    "C_1",
    "C_2",
    "transformer_tiny",
    "combined",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerName {
    Sgd,
    Nag,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub name: OptimizerName,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerSettings {
    pub fn kind(&self) -> OptimizerKind {
        match self.name {
            OptimizerName::Sgd => OptimizerKind::Sgd,
            OptimizerName::Nag => OptimizerKind::Nag {
                momentum: self.momentum,
            },
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleName {
    Constant,
    Halving,
    ForceAnneal,
    Noam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSettings {
    pub name: ScheduleName,
    /// Constant rate, or base rate of the halving and annealing schedules.
    pub lr: f64,
    /// First epoch at which halving or annealing applies.
    pub start_epoch: u32,
    pub shrink: f64,
    pub warmup_steps: u64,
    pub noam_scale: f64,
    pub paper_literal_noam: bool,
}

/// Divisor of the summed batch gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradNorm {
    Sentences,
    Tokens,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub optimizer: OptimizerSettings,
    pub schedule: ScheduleSettings,
    /// Token budget per step.
    pub batch_size: usize,
    pub max_length: usize,
    pub length_mode: LengthMode,
    pub label_smoothing: f64,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub grad_norm: GradNorm,
    /// Step limit; 0 means no limit.
    pub max_steps: u64,
    pub max_epochs: u32,
    pub save_every: u64,
    pub keep_checkpoints: usize,
    pub log_every: u64,
    pub beam_size: usize,
    pub penalty: PenaltyKind,
    pub alpha: f64,
    /// Output length cap; 0 means `2·source + 10`.
    pub max_output_len: usize,
    pub ensemble_n: usize,
    pub ensemble_interval: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
    pub train_split: String,
    pub valid_split: String,
    pub bpe_merges: usize,
    pub clean: bool,
    /// Word list for the untranslated filter; empty selects the bundled list.
    pub english_words: String,
    /// Pair indices to drop, one per line; empty for none.
    pub exclude_list: String,
    pub vi_side: Side,
    pub diacritic_threshold: f64,
    pub stopword_threshold: f64,
}

fn base(preset: &str, model: ModelConfig) -> ExperimentConfig {
    ExperimentConfig {
        preset: preset.to_string(),
        model,
        optimizer: OptimizerSettings {
            name: OptimizerName::Adam,
            momentum: 0.99,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        },
        schedule: ScheduleSettings {
            name: ScheduleName::Noam,
            lr: 1.0,
            start_epoch: 10,
            shrink: 0.5,
            warmup_steps: 4000,
            noam_scale: 1.0,
            paper_literal_noam: false,
        },
        batch_size: 4096,
        max_length: 70,
        length_mode: LengthMode::Exclude,
        label_smoothing: 0.1,
        clip_norm: 0.0,
        grad_norm: GradNorm::Tokens,
        max_steps: 0,
        max_epochs: 64,
        save_every: 1000,
        keep_checkpoints: 20,
        log_every: 100,
        beam_size: 5,
        penalty: PenaltyKind::F1,
        alpha: 2.0,
        max_output_len: 0,
        ensemble_n: 1,
        ensemble_interval: 0.03,
        seed: 1,
        data_dir: PathBuf::from("data"),
        run_dir: PathBuf::from("run"),
        src_lang: "en".into(),
        tgt_lang: "vi".into(),
        train_split: "train".into(),
        valid_split: "valid".into(),
        bpe_merges: 32_000,
        clean: true,
        english_words: String::new(),
        exclude_list: String::new(),
        vi_side: Side::Target,
        diacritic_threshold: LanguageThresholds::default().diacritics,
        stopword_threshold: LanguageThresholds::default().stopwords,
    }
}

fn rnn(preset: &str, model: RnnConfig) -> ExperimentConfig {
    let mut c = base(preset, ModelConfig::Rnn(model));
    c.optimizer.name = OptimizerName::Sgd;
    c.schedule.name = ScheduleName::Halving;
    c.schedule.lr = 1.0;
    c.schedule.start_epoch = 10;
    c.batch_size = 1280;
    c.length_mode = LengthMode::Truncate;
    c.label_smoothing = 0.0;
    c.clip_norm = 5.0;
    c.grad_norm = GradNorm::Sentences;
    c.beam_size = 10;
    c
}

fn convs2s(preset: &str, model: ConvS2SConfig, lr: f64, start: u32, shrink: f64) -> ExperimentConfig {
    let mut c = base(preset, ModelConfig::ConvS2S(model));
    c.optimizer.name = OptimizerName::Nag;
    c.schedule.name = ScheduleName::ForceAnneal;
    c.schedule.lr = lr;
    c.schedule.start_epoch = start;
    c.schedule.shrink = shrink;
    c.clip_norm = 0.1;
    c.beam_size = 10;
    c
}

fn transformer(preset: &str, model: TransformerConfig, warmup: u64, batch: usize) -> ExperimentConfig {
    let mut c = base(preset, ModelConfig::Transformer(model));
    c.schedule.warmup_steps = warmup;
    c.batch_size = batch;
    c
}

/// Small models and a fast constant-rate Adam schedule for toy tasks.
fn tiny(mut c: ExperimentConfig, lr: f64) -> ExperimentConfig {
    c.optimizer.name = OptimizerName::Adam;
    c.optimizer.beta2 = 0.98;
    c.schedule.name = ScheduleName::Constant;
    c.schedule.lr = lr;
    c.batch_size = 256;
    c.label_smoothing = 0.0;
    c.grad_norm = GradNorm::Tokens;
    c.clip_norm = 1.0;
    c.max_epochs = 1000;
    c.max_steps = 3000;
    c.save_every = 500;
    c.log_every = 100;
    c.bpe_merges = 0;
    c.clean = false;
    c
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let v = REFERENCE_VOCAB;
        Ok(match name {
            "rnn_baseline" => rnn(name, RnnConfig::baseline(v)),
            "rnn_tiny" => tiny(rnn(name, RnnConfig::tiny(v)), 3e-3),
            "B_base_table" => convs2s(name, ConvS2SConfig::b_base(v), 0.5, 24, 0.1),
            "B_base_text" => convs2s(name, ConvS2SConfig::b_base(v), 0.25, 24, 0.1),
            "B_1" => convs2s(name, ConvS2SConfig::b_1(v), 0.5, 50, 0.2),
            "B_2" => convs2s(name, ConvS2SConfig::b_2(v), 0.5, 50, 0.2),
            "B_3" => convs2s(name, ConvS2SConfig::b_3(v), 0.5, 50, 0.2),
            "convs2s_tiny" => tiny(convs2s(name, ConvS2SConfig::tiny(v), 0.5, 50, 0.2), 3e-3),
            "C_base" => transformer(name, TransformerConfig::c_base(v), 4000, 4096),
            "C_1" => transformer(name, TransformerConfig::c_1(v), 16000, 4096),
            "C_2" => transformer(name, TransformerConfig::c_2(v), 16000, 2048),
            "transformer_tiny" => tiny(transformer(name, TransformerConfig::tiny(v), 4000, 256), 3e-3),
            "combined" => {
                let mut c = transformer(name, TransformerConfig::c_2(v), 16000, 2048);
                c.alpha = 1.5;
                c.beam_size = 5;
                c.ensemble_n = 8;
                c.ensemble_interval = 0.03;
                c
            }
            _ => {
                let hint = suggest(name, PRESETS.iter().copied()).map(|s| format!(" (did you mean `{s}`?)"));
                return Err(config_error(format!(
                    "unknown preset `{name}`{}; known presets: {}",
                    hint.unwrap_or_default(),
                    PRESETS.join(", ")
                )));
            }
        })
    }

    pub fn family(&self) -> &'static str {
        self.model.family()
    }

    pub fn schedule(&self) -> Schedule {
        let s = &self.schedule;
        match s.name {
            ScheduleName::Constant => Schedule::Constant { lr: s.lr },
            ScheduleName::Halving => Schedule::Halving {
                base: s.lr,
                start: s.start_epoch,
            },
            ScheduleName::ForceAnneal => Schedule::ForceAnneal {
                base: s.lr,
                start: s.start_epoch,
                shrink: s.shrink,
            },
            ScheduleName::Noam => Schedule::Noam {
                d_model: self.model_width(),
                warmup: s.warmup_steps,
                scale: s.noam_scale,
                paper_literal: s.paper_literal_noam,
            },
        }
    }

    /// Width used by the warmup schedule: `d_model`, the cell size, or the
    /// embedding width.
    pub fn model_width(&self) -> usize {
        match &self.model {
            ModelConfig::Rnn(c) => c.hidden,
            ModelConfig::ConvS2S(c) => c.embed,
            ModelConfig::Transformer(c) => c.d_model,
        }
    }

    pub fn penalty_config(&self) -> Result<PenaltyConfig> {
        Ok(PenaltyConfig::new(self.penalty, self.alpha, self.beam_size)?)
    }

    pub fn ensemble(&self) -> EnsembleSpec {
        EnsembleSpec {
            n: self.ensemble_n,
            interval: self.ensemble_interval,
        }
    }

    pub fn language_thresholds(&self) -> LanguageThresholds {
        LanguageThresholds {
            diacritics: self.diacritic_threshold,
            stopwords: self.stopword_threshold,
        }
    }

    pub fn output_limit(&self, src_len: usize) -> usize {
        if self.max_output_len > 0 {
            self.max_output_len
        } else {
            2 * src_len + 10
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule().validate()?;
        self.penalty_config()?;
        let checks: [(bool, &str); 9] = [
            (self.batch_size > 0, "batch_size must be positive"),
            (self.max_length > 0, "max_length must be positive"),
            (
                (0.0..1.0).contains(&self.label_smoothing),
                "label_smoothing must be in [0, 1)",
            ),
            (self.clip_norm >= 0.0, "clip_norm must be >= 0"),
            (self.ensemble_n >= 1, "ensemble_n must be at least 1"),
            (self.ensemble_interval > 0.0, "ensemble_interval must be positive"),
            (self.save_every > 0, "save_every must be positive"),
            (self.keep_checkpoints > 0, "keep_checkpoints must be positive"),
            (self.log_every > 0, "log_every must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(config_error(msg));
            }
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![("preset", self.preset.clone())];
        match &self.model {
            ModelConfig::Rnn(m) => {
                e.push(("layers", m.layers.to_string()));
                e.push(("hidden", m.hidden.to_string()));
                e.push(("dropout", fmt_f64(m.dropout)));
                e.push(("init_range", fmt_f64(m.init_range)));
            }
            ModelConfig::ConvS2S(m) => {
                e.push(("encoder_layers", fmt_groups(&m.encoder)));
                e.push(("decoder_layers", fmt_groups(&m.decoder)));
                e.push(("embed", m.embed.to_string()));
                e.push(("out_embed", m.out_embed.to_string()));
                e.push(("dropout", fmt_f64(m.dropout)));
                e.push(("max_positions", m.max_positions.to_string()));
                e.push(("faithful_scaling", m.faithful_scaling.to_string()));
            }
            ModelConfig::Transformer(m) => {
                e.push(("layers", m.layers.to_string()));
                e.push(("d_model", m.d_model.to_string()));
                e.push(("heads", m.heads.to_string()));
                e.push(("d_ff", m.d_ff.to_string()));
                e.push(("dropout", fmt_f64(m.dropout)));
                e.push(("ln_eps", fmt_f64(m.ln_eps)));
                e.push(("pe_sin_base", fmt_f64(m.positions.sin_base)));
                e.push(("pe_cos_base", fmt_f64(m.positions.cos_base)));
            }
        }
        let o = &self.optimizer;
        let s = &self.schedule;
        e.extend([
            ("optimizer", optimizer_name(o.name).to_string()),
            ("momentum", fmt_f64(o.momentum)),
            ("adam_beta1", fmt_f64(o.beta1)),
            ("adam_beta2", fmt_f64(o.beta2)),
            ("adam_eps", fmt_f64(o.eps)),
            ("schedule", schedule_name(s.name).to_string()),
            ("lr", fmt_f64(s.lr)),
            ("lr_start_epoch", s.start_epoch.to_string()),
            ("lr_shrink", fmt_f64(s.shrink)),
            ("warmup_steps", s.warmup_steps.to_string()),
            ("noam_scale", fmt_f64(s.noam_scale)),
            ("paper_literal_noam", s.paper_literal_noam.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_length", self.max_length.to_string()),
            ("length_mode", length_mode_name(self.length_mode).to_string()),
            ("label_smoothing", fmt_f64(self.label_smoothing)),
            ("clip_norm", fmt_f64(self.clip_norm)),
            ("grad_norm", grad_norm_name(self.grad_norm).to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("save_every", self.save_every.to_string()),
            ("keep_checkpoints", self.keep_checkpoints.to_string()),
            ("log_every", self.log_every.to_string()),
            ("beam_size", self.beam_size.to_string()),
            ("penalty", penalty_name(self.penalty).to_string()),
            ("length_penalty", fmt_f64(self.alpha)),
            ("max_output_len", self.max_output_len.to_string()),
            ("ensemble_n", self.ensemble_n.to_string()),
            ("ensemble_interval", fmt_f64(self.ensemble_interval)),
            ("seed", self.seed.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("run_dir", self.run_dir.display().to_string()),
            ("src_lang", self.src_lang.clone()),
            ("tgt_lang", self.tgt_lang.clone()),
            ("train_split", self.train_split.clone()),
            ("valid_split", self.valid_split.clone()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("clean", self.clean.to_string()),
            ("english_words", self.english_words.clone()),
            ("exclude_list", self.exclude_list.clone()),
            ("vi_side", side_name(self.vi_side).to_string()),
            ("diacritic_threshold", fmt_f64(self.diacritic_threshold)),
            ("stopword_threshold", fmt_f64(self.stopword_threshold)),
        ]);
        e
    }

    /// Fully resolved config in the file format; parsing it gives back an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Sets one key. Errors name the key; the caller adds the location.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let family = self.family();
        match (key, &mut self.model) {
            ("layers", ModelConfig::Rnn(m)) => m.layers = parse(key, value)?,
            ("hidden", ModelConfig::Rnn(m)) => m.hidden = parse(key, value)?,
            ("dropout", ModelConfig::Rnn(m)) => m.dropout = parse(key, value)?,
            ("init_range", ModelConfig::Rnn(m)) => m.init_range = parse(key, value)?,
            ("encoder_layers", ModelConfig::ConvS2S(m)) => m.encoder = parse_groups(key, value)?,
            ("decoder_layers", ModelConfig::ConvS2S(m)) => m.decoder = parse_groups(key, value)?,
            ("embed", ModelConfig::ConvS2S(m)) => m.embed = parse(key, value)?,
            ("out_embed", ModelConfig::ConvS2S(m)) => m.out_embed = parse(key, value)?,
            ("dropout", ModelConfig::ConvS2S(m)) => m.dropout = parse(key, value)?,
            ("max_positions", ModelConfig::ConvS2S(m)) => m.max_positions = parse(key, value)?,
            ("faithful_scaling", ModelConfig::ConvS2S(m)) => m.faithful_scaling = parse(key, value)?,
            ("layers", ModelConfig::Transformer(m)) => m.layers = parse(key, value)?,
            ("d_model", ModelConfig::Transformer(m)) => m.d_model = parse(key, value)?,
            ("heads", ModelConfig::Transformer(m)) => m.heads = parse(key, value)?,
            ("d_ff", ModelConfig::Transformer(m)) => m.d_ff = parse(key, value)?,
            ("dropout", ModelConfig::Transformer(m)) => m.dropout = parse(key, value)?,
            ("ln_eps", ModelConfig::Transformer(m)) => m.ln_eps = parse(key, value)?,
            ("pe_sin_base", ModelConfig::Transformer(m)) => m.positions.sin_base = parse(key, value)?,
            ("pe_cos_base", ModelConfig::Transformer(m)) => m.positions.cos_base = parse(key, value)?,
            ("preset", _) => return Err("`preset` may only appear once, at file level".into()),
            ("optimizer", _) => {
                self.optimizer.name = choose(
                    key,
                    value,
                    &[
                        ("sgd", OptimizerName::Sgd),
                        ("nag", OptimizerName::Nag),
                        ("adam", OptimizerName::Adam),
                    ],
                )?
            }
            ("momentum", _) => self.optimizer.momentum = parse(key, value)?,
            ("adam_beta1", _) => self.optimizer.beta1 = parse(key, value)?,
            ("adam_beta2", _) => self.optimizer.beta2 = parse(key, value)?,
            ("adam_eps", _) => self.optimizer.eps = parse(key, value)?,
            ("schedule", _) => {
                self.schedule.name = choose(
                    key,
                    value,
                    &[
                        ("constant", ScheduleName::Constant),
                        ("halving", ScheduleName::Halving),
                        ("force_anneal", ScheduleName::ForceAnneal),
                        ("noam", ScheduleName::Noam),
                    ],
                )?
            }
            ("lr", _) => self.schedule.lr = parse(key, value)?,
            ("lr_start_epoch", _) => self.schedule.start_epoch = parse(key, value)?,
            ("lr_shrink", _) => self.schedule.shrink = parse(key, value)?,
            ("warmup_steps", _) => self.schedule.warmup_steps = parse(key, value)?,
            ("noam_scale", _) => self.schedule.noam_scale = parse(key, value)?,
            ("paper_literal_noam", _) => self.schedule.paper_literal_noam = parse(key, value)?,
            ("batch_size", _) => self.batch_size = parse(key, value)?,
            ("max_length", _) => self.max_length = parse(key, value)?,
            ("length_mode", _) => {
                self.length_mode = choose(
                    key,
                    value,
                    &[("exclude", LengthMode::Exclude), ("truncate", LengthMode::Truncate)],
                )?
            }
            ("label_smoothing", _) => self.label_smoothing = parse(key, value)?,
            ("clip_norm", _) => self.clip_norm = parse(key, value)?,
            ("grad_norm", _) => {
                self.grad_norm = choose(
                    key,
                    value,
                    &[("sentences", GradNorm::Sentences), ("tokens", GradNorm::Tokens)],
                )?
            }
            ("max_steps", _) => self.max_steps = parse(key, value)?,
            ("max_epochs", _) => self.max_epochs = parse(key, value)?,
            ("save_every", _) => self.save_every = parse(key, value)?,
            ("keep_checkpoints", _) => self.keep_checkpoints = parse(key, value)?,
            ("log_every", _) => self.log_every = parse(key, value)?,
            ("beam_size", _) => self.beam_size = parse(key, value)?,
            ("penalty", _) => {
                self.penalty = choose(
                    key,
                    value,
                    &[
                        ("f1", PenaltyKind::F1),
                        ("f2", PenaltyKind::F2),
                        ("none", PenaltyKind::None),
                    ],
                )?
            }
            ("length_penalty", _) => self.alpha = parse(key, value)?,
            ("max_output_len", _) => self.max_output_len = parse(key, value)?,
            ("ensemble_n", _) => self.ensemble_n = parse(key, value)?,
            ("ensemble_interval", _) => self.ensemble_interval = parse(key, value)?,
            ("seed", _) => self.seed = parse(key, value)?,
            ("data_dir", _) => self.data_dir = PathBuf::from(value),
            ("run_dir", _) => self.run_dir = PathBuf::from(value),
            ("src_lang", _) => self.src_lang = word(key, value)?,
            ("tgt_lang", _) => self.tgt_lang = word(key, value)?,
            ("train_split", _) => self.train_split = word(key, value)?,
            ("valid_split", _) => self.valid_split = word(key, value)?,
            ("bpe_merges", _) => self.bpe_merges = parse(key, value)?,
            ("clean", _) => self.clean = parse(key, value)?,
            ("english_words", _) => self.english_words = value.to_string(),
            ("exclude_list", _) => self.exclude_list = value.to_string(),
            ("vi_side", _) => self.vi_side = choose(key, value, &[("source", Side::Source), ("target", Side::Target)])?,
            ("diacritic_threshold", _) => self.diacritic_threshold = parse(key, value)?,
            ("stopword_threshold", _) => self.stopword_threshold = parse(key, value)?,
            _ => {
                return Err(if known_keys().contains(&key) {
                    format!("key `{key}` does not apply to the {family} family")
                } else {
                    match suggest(key, known_keys().iter().copied()) {
                        Some(s) => format!("unknown key `{key}` (did you mean `{s}`?)"),
                        None => format!("unknown key `{key}`"),
                    }
                })
            }
        }
        Ok(())
    }

    /// Parses config text. `origin` labels error messages. Overrides are
    /// `key=value` strings applied after the file.
    pub fn parse(text: &str, origin: &Path, overrides: &[String]) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(sep) = line.find(['=', ':']) else {
                return Err(perr(i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let (k, v) = (line[..sep].trim(), line[sep + 1..].trim());
            if k.is_empty() {
                return Err(perr(i + 1, "missing key".into()));
            }
            if let Some((first, _, _)) = entries.iter().find(|e| e.1 == k) {
                return Err(perr(i + 1, format!("duplicate key `{k}` (first set on line {first})")));
            }
            entries.push((i + 1, k, v));
        }
        let Some(&(pline, _, preset)) = entries.iter().find(|e| e.1 == "preset") else {
            return Err(perr(0, "missing required key `preset`".into()));
        };
        let mut cfg = Self::preset(preset).map_err(|e| perr(pline, e.to_string()))?;
        for &(line, k, v) in entries.iter().filter(|e| e.1 != "preset") {
            cfg.set(k, v).map_err(|m| perr(line, m))?;
        }
        for o in overrides {
            let oerr = |msg: String| Error::Parse {
                path: PathBuf::from("--override"),
                line: 0,
                msg,
            };
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| oerr(format!("expected key=value, got `{o}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(oerr)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, overrides)
    }
}

/// Union of the keys of every family.
pub fn known_keys() -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = Vec::new();
    for p in ["rnn_tiny", "convs2s_tiny", "transformer_tiny"] {
        for (k, _) in ExperimentConfig::preset(p).expect("builtin preset").entries() {
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys
}

/// Closest candidate by edit distance, if reasonably close.
pub fn suggest<'a>(word: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|&(d, c)| d <= 2.max(c.len() / 3))
        .min()
        .map(|(_, c)| c)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("key `{key}`: cannot parse `{value}` as {}", short_type::<T>()))
}

fn short_type<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    match full {
        "bool" => "true/false",
        "f64" => "a number",
        _ => "a non-negative integer",
    }
}

fn word(key: &str, value: &str) -> std::result::Result<String, String> {
    if value.is_empty() || value.contains(char::is_whitespace) || value.contains('/') {
        Err(format!("key `{key}`: expected a single name, got `{value}`"))
    } else {
        Ok(value.to_string())
    }
}

fn choose<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> std::result::Result<T, String> {
    options
        .iter()
        .find(|(n, _)| *n == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("key `{key}`: expected one of {}, got `{value}`", names.join("|"))
        })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// `count x channels x kernel` groups, comma separated.
fn fmt_groups(groups: &[LayerGroup]) -> String {
    groups
        .iter()
        .map(|g| format!("{}x{}x{}", g.count, g.channels, g.kernel))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_groups(key: &str, value: &str) -> std::result::Result<Vec<LayerGroup>, String> {
    let bad = || format!("key `{key}`: expected groups like `4x256x3,1x2048x1`, got `{value}`");
    value
        .split(',')
        .map(|g| {
            let parts: Vec<usize> = g
                .trim()
                .split('x')
                .map(|n| n.trim().parse().map_err(|_| bad()))
                .collect::<std::result::Result<_, _>>()?;
            match parts[..] {
                [count, channels, kernel] => Ok(LayerGroup::new(count, channels, kernel)),
                _ => Err(bad()),
            }
        })
        .collect()
}

fn optimizer_name(n: OptimizerName) -> &'static str {
    match n {
        OptimizerName::Sgd => "sgd",
        OptimizerName::Nag => "nag",
        OptimizerName::Adam => "adam",
    }
}

fn schedule_name(n: ScheduleName) -> &'static str {
    match n {
        ScheduleName::Constant => "constant",
        ScheduleName::Halving => "halving",
        ScheduleName::ForceAnneal => "force_anneal",
        ScheduleName::Noam => "noam",
    }
}

fn length_mode_name(m: LengthMode) -> &'static str {
    match m {
        LengthMode::Exclude => "exclude",
        LengthMode::Truncate => "truncate",
    }
}

fn grad_norm_name(g: GradNorm) -> &'static str {
    match g {
        GradNorm::Sentences => "sentences",
        GradNorm::Tokens => "tokens",
    }
}

pub fn penalty_name(p: PenaltyKind) -> &'static str {
    match p {
        PenaltyKind::F1 => "f1",
        PenaltyKind::F2 => "f2",
        PenaltyKind::None => "none",
    }
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Source => "source",
        Side::Target => "target",
    }
}
