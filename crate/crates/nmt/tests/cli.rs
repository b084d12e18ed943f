use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmt"))
        .args(args)
        .env("NMT_THREADS", "1")
        .output()
        .expect("run nmt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A copy corpus over single letters plus a config pointing at it.
fn copy_run(dir: &TempDir, preset: &str, extra: &str) -> PathBuf {
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let lines: Vec<String> = (0..60)
        .map(|i| {
            (0..3 + i % 5)
                .map(|j| ((b'a' + ((i * 7 + j * 3) % 12) as u8) as char).to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    for split in ["train", "valid"] {
        for lang in ["en", "vi"] {
            let n = if split == "train" { 60 } else { 8 };
            fs::write(data.join(format!("{split}.{lang}")), lines[..n].join("\n") + "\n").unwrap();
        }
    }
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "preset = {preset}\ndata_dir = {}\nrun_dir = {}\n{extra}",
            data.display(),
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn score_identical_files_is_100() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("a.txt");
    fs::write(&f, "the cat sat on the mat\nhello , world !\n").unwrap();
    let o = nmt(&["score", "--hyp", path(&f), "--ref", path(&f)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("BLEU = 100.00 ("), "{}", stdout(&o));
    assert!(stdout(&o).contains("BP=1.000"));
}

#[test]
fn score_rejects_unaligned_files() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::write(&a, "one\ntwo\n").unwrap();
    fs::write(&b, "one\n").unwrap();
    let o = nmt(&["score", "--hyp", path(&a), "--ref", path(&b)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_file_names_the_path() {
    let o = nmt(&["score", "--hyp", "/nonexistent/h.txt", "--ref", "/nonexistent/r.txt"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("/nonexistent/h.txt"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(nmt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(nmt(&["train"]).status.code(), Some(1));
    assert_eq!(nmt(&["--help"]).status.code(), Some(0));
}

#[test]
fn misspelled_config_key_gets_a_suggestion() {
    let dir = TempDir::new().unwrap();
    let cfg = copy_run(&dir, "transformer_tiny", "beem_size = 4\n");
    let o = nmt(&["preprocess", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("beam_size"), "{}", stderr(&o));
}

#[test]
fn key_from_another_family_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = copy_run(&dir, "rnn_tiny", "heads = 4\n");
    let o = nmt(&["preprocess", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not apply"), "{}", stderr(&o));
}

#[test]
fn train_on_empty_corpus_fails_validation() {
    let dir = TempDir::new().unwrap();
    let cfg = copy_run(&dir, "transformer_tiny", "clean = true\n");
    // Single latin letters are neither Vietnamese nor kept by the cleaner.
    let o = nmt(&["train", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("empty corpus after filtering"), "{}", stderr(&o));
}

#[test]
fn averaging_mismatched_models_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (a_dir, b_dir) = (
        TempDir::new_in(dir.path()).unwrap(),
        TempDir::new_in(dir.path()).unwrap(),
    );
    let a = copy_run(&a_dir, "transformer_tiny", "");
    let b = copy_run(&b_dir, "rnn_tiny", "");
    let (a_dir, b_dir) = (a_dir.path(), b_dir.path());
    for cfg in [&a, &b] {
        let o = nmt(&["train", "--config", path(cfg), "--override", "max_steps=1"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ca = a_dir.join("run/ckpt/step-1.nmtf");
    let cb = b_dir.join("run/ckpt/step-1.nmtf");
    let out = dir.path().join("avg.nmtf");
    let o = nmt(&["average-checkpoints", "--output", path(&out), path(&ca), path(&cb)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("incompatible checkpoints"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn second_run_in_a_locked_directory_is_refused() {
    let dir = TempDir::new().unwrap();
    let cfg = copy_run(&dir, "transformer_tiny", "");
    fs::create_dir_all(dir.path().join("run")).unwrap();
    fs::write(dir.path().join("run/lock"), "").unwrap();
    let o = nmt(&["preprocess", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_from_preprocess_to_tuning() {
    let dir = TempDir::new().unwrap();
    let cfg = copy_run(
        &dir,
        "transformer_tiny",
        "max_steps = 40\nsave_every = 10\nlog_every = 5\n",
    );
    let run = dir.path().join("run");

    let o = nmt(&["preprocess", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("pairs kept\t60"), "{}", stdout(&o));
    assert!(run.join("vocab.txt").exists() && run.join("bpe.codes").exists());

    let o = nmt(&["train", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("steps\t40"), "{}", stdout(&o));
    for step in [10, 20, 30, 40] {
        assert!(run.join(format!("ckpt/step-{step}.nmtf")).exists());
    }
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 1 + 40 / 5, "{log}");
    let meta = fs::read_to_string(run.join("ckpt/metadata.tsv")).unwrap();
    assert_eq!(meta.lines().count(), 5, "{meta}");

    // Average the last two checkpoints: an interval of 10 steps in epochs.
    let epoch_at_10: f64 = meta
        .lines()
        .nth(1)
        .unwrap()
        .split('\t')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let interval = epoch_at_10.to_string();
    let o = nmt(&[
        "average-checkpoints",
        "--dir",
        path(&run.join("ckpt")),
        "--n",
        "2",
        "--interval",
        &interval,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.join("ckpt/averaged.nmtf").exists());

    let input = dir.path().join("data/valid.en");
    let o = nmt(&[
        "translate",
        "--config",
        path(&cfg),
        "--input",
        path(&input),
        "--beam",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 8);
    assert!(stderr(&o).contains("tokens/sec"), "{}", stderr(&o));

    let o = nmt(&[
        "translate",
        "--config",
        path(&cfg),
        "--input",
        path(&input),
        "--beam",
        "3",
        "--nbest",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let first: Vec<&str> = text.split("\n\n").next().unwrap().lines().collect();
    assert_eq!(first.len(), 2, "{text}");
    assert!(first[0].starts_with("1\t") && first[1].starts_with("2\t"), "{text}");

    let o = nmt(&["tune-alpha", "--config", path(&cfg), "--range", "0.5:1.5:0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows[0], "alpha\tbleu_f1\tbleu_f2");
    assert_eq!(rows.len(), 4, "{rows:?}");
}

#[test]
fn extract_writes_aligned_sides() {
    let dir = TempDir::new().unwrap();
    let page = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bilingual_page.html");
    let (en, vi) = (dir.path().join("x.en"), dir.path().join("x.vi"));
    let o = nmt(&[
        "extract",
        "--src-css",
        ".pair .en",
        "--tgt-css",
        ".pair .vi",
        "--src-out",
        path(&en),
        "--tgt-out",
        path(&vi),
        path(&page),
        path(&page),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("pairs\t6"));
    let en = fs::read_to_string(en).unwrap();
    let vi = fs::read_to_string(vi).unwrap();
    assert_eq!(en.lines().count(), 6);
    assert_eq!(vi.lines().nth(1), Some("Trời mưa cả ngày."));

    let o = nmt(&[
        "extract",
        "--src-css",
        ".en",
        "--tgt-css",
        ".vi",
        "--src-out",
        "/dev/null",
        "--tgt-out",
        "/dev/null",
        path(&page),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bilingual_page.html"), "{}", stderr(&o));
}
