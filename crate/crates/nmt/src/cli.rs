//! The `nmt` command line. Exit status is 0 on success, 1 when input or
//! configuration is invalid, 2 when a run fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use nmt_core::decoding::PenaltyConfig;
use nmt_core::evaluation::corpus_bleu;

use crate::config::{penalty_name, ExperimentConfig};
use crate::error::{config_error, Error, Result};
use crate::extract::extract_pairs;
use crate::files::{read_lines, read_text, save_checkpoint, write_lines};
use crate::pipeline::{self, Translator};

#[derive(Parser, Debug)]
#[command(name = "nmt", version, about = "Train and run neural machine translation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean the training split, learn subwords and build the vocabulary.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a model, preprocessing first if needed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Translate a file line by line with beam search.
    Translate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// f1, f2 or none.
        #[arg(long)]
        penalty: Option<String>,
        /// Print this many hypotheses per line as rank, score and sentence
        /// separated by tabs, with a blank line after each input line.
        #[arg(long, default_value_t = 1)]
        nbest: usize,
        /// Defaults to the averaged or newest checkpoint of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Average checkpoints spaced a fraction of an epoch apart, or the
    /// files given explicitly.
    AverageCheckpoints {
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0.03)]
        interval: f64,
        /// Defaults to `<dir>/averaged.nmtf`.
        #[arg(long)]
        output: Option<PathBuf>,
        files: Vec<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Add-one smoothing of the 2- to 4-gram precisions.
        #[arg(long)]
        smooth: bool,
    },
    /// Sentence pairs from saved bilingual HTML pages.
    Extract {
        /// CSS selector of the source segments.
        #[arg(long)]
        src_css: String,
        /// CSS selector of the target segments.
        #[arg(long)]
        tgt_css: String,
        #[arg(long)]
        src_out: PathBuf,
        #[arg(long)]
        tgt_out: PathBuf,
        #[arg(required = true)]
        pages: Vec<PathBuf>,
    },
    /// Validation BLEU across length-penalty strengths for both penalty forms.
    TuneAlpha {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0.1:3.0:0.1")]
        range: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out() -> std::io::StdoutLock<'static> {
    std::io::stdout().lock()
}

fn emit(text: &str) -> Result<()> {
    out().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let r = pipeline::preprocess(&cfg)?;
            let mut s = format!("pairs read\t{}\npairs kept\t{}\n", r.input_pairs, r.filter.kept.len());
            for (name, n) in &r.filter.removed {
                s.push_str(&format!("removed {name}\t{n}\n"));
            }
            s.push_str(&format!("merges\t{}\nvocabulary\t{}\n", r.merges, r.vocab));
            emit(&s)
        }
        Command::Train { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let summary = pipeline::train_run(&cfg)?;
            emit(&format!(
                "steps\t{}\nepochs\t{:.3}\nstopped\t{:?}\n",
                summary.steps, summary.epochs, summary.stop
            ))
        }
        Command::Translate {
            config,
            input,
            beam,
            alpha,
            penalty,
            nbest,
            checkpoint,
            mut overrides,
        } => {
            if let Some(b) = beam {
                overrides.push(format!("beam_size={b}"));
            }
            if let Some(a) = alpha {
                overrides.push(format!("length_penalty={a}"));
            }
            if let Some(p) = penalty {
                overrides.push(format!("penalty={p}"));
            }
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let pc: PenaltyConfig = cfg.penalty_config()?;
            let t = Translator::open(&cfg, checkpoint.as_deref())?;
            let lines = read_lines(&input)?;
            let (outs, rate) = t.translate_all(&lines, &cfg, &pc)?;
            let mut s = String::new();
            for o in &outs {
                if nbest <= 1 {
                    s.push_str(&o.nbest[0].0);
                    s.push('\n');
                } else {
                    for (rank, (h, score)) in o.nbest.iter().take(nbest).enumerate() {
                        s.push_str(&format!("{}\t{score:.6}\t{h}\n", rank + 1));
                    }
                    s.push('\n');
                }
            }
            emit(&s)?;
            let truncated = outs.iter().filter(|o| o.truncated).count();
            eprintln!(
                "translated {} lines, beam {}, {} alpha {}, {rate:.1} tokens/sec, {truncated} truncated",
                outs.len(),
                cfg.beam_size,
                penalty_name(cfg.penalty),
                cfg.alpha
            );
            Ok(())
        }
        Command::AverageCheckpoints {
            dir,
            n,
            interval,
            output,
            files,
        } => {
            let (chosen, avg, default_out) = match (&dir, files.is_empty()) {
                (_, false) => {
                    let avg = pipeline::average_files(&files)?;
                    (
                        files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                        avg,
                        None,
                    )
                }
                (Some(d), true) => {
                    let (steps, avg) = pipeline::average_dir(d, n, interval)?;
                    (
                        steps.iter().map(u64::to_string).collect(),
                        avg,
                        Some(d.join("averaged.nmtf")),
                    )
                }
                (None, true) => return Err(Error::Usage("give --dir or checkpoint files".into())),
            };
            let target = output
                .or(default_out)
                .ok_or_else(|| Error::Usage("--output is required with explicit files".into()))?;
            save_checkpoint(&target, &avg)?;
            emit(&format!("averaged {}\nwrote {}\n", chosen.join(" "), target.display()))
        }
        Command::Score { hyp, reference, smooth } => {
            let h = read_lines(&hyp)?;
            let r = read_lines(&reference)?;
            if h.len() != r.len() {
                return Err(config_error(format!(
                    "{} has {} lines but {} has {}",
                    hyp.display(),
                    h.len(),
                    reference.display(),
                    r.len()
                )));
            }
            let report = corpus_bleu(&h, &r, smooth)?;
            emit(&format!("{report}\n"))
        }
        Command::Extract {
            src_css,
            tgt_css,
            src_out,
            tgt_out,
            pages,
        } => {
            let (mut src, mut tgt) = (Vec::new(), Vec::new());
            for page in &pages {
                let html = read_text(page)?;
                let pairs = extract_pairs(&html, &src_css, &tgt_css).map_err(|e| match e {
                    Error::Core(nmt_core::Error::Config(msg)) => config_error(format!("{}: {msg}", page.display())),
                    other => other,
                })?;
                for (s, t) in pairs {
                    src.push(s);
                    tgt.push(t);
                }
            }
            write_lines(&src_out, &src)?;
            write_lines(&tgt_out, &tgt)?;
            emit(&format!("pages\t{}\npairs\t{}\n", pages.len(), src.len()))
        }
        Command::TuneAlpha {
            config,
            range,
            checkpoint,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let alphas = pipeline::parse_range(&range)?;
            let rows = pipeline::tune_alpha(&cfg, checkpoint.as_deref(), &alphas)?;
            let mut s = String::from("alpha\tbleu_f1\tbleu_f2\n");
            for (a, f1, f2) in rows {
                s.push_str(&format!("{a}\t{f1:.2}\t{f2:.2}\n"));
            }
            emit(&s)
        }
    }
}
