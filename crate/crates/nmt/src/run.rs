//! Layout of a run directory:
//!
//! ```text
//! <run_dir>/lock              present while a command owns the directory
//! <run_dir>/resolved-config   every key of the config in effect
//! <run_dir>/bpe.codes         shared merge operations
//! <run_dir>/vocab.txt         one token per line, id = line number
//! <run_dir>/data/<split>.<lang>   cleaned, subword-segmented text
//! <run_dir>/ckpt/step-<N>.nmtf    parameter snapshots
//! <run_dir>/ckpt/metadata.tsv     step, epoch, validation loss, validation BLEU
//! <run_dir>/train.log         step, lr, loss, tokens/sec
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::files;

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("resolved-config")
    }

    pub fn codes(&self) -> PathBuf {
        self.root.join("bpe.codes")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn data(&self, split: &str, lang: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.{lang}"))
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.root.join("ckpt")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        checkpoint_path(&self.ckpt_dir(), step)
    }

    pub fn metadata(&self) -> PathBuf {
        self.ckpt_dir().join("metadata.tsv")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train.log")
    }

    /// Takes the directory lock; released when the guard drops.
    pub fn lock(&self) -> Result<RunLock> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.root.join("lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(self.root.clone())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step}.nmtf"))
}

/// Steps of every `step-<N>.nmtf` in `dir`, ascending.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<u64>> {
    let mut steps = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(n) = name.strip_prefix("step-").and_then(|s| s.strip_suffix(".nmtf")) {
            if let Ok(step) = n.parse() {
                steps.push(step);
            }
        }
    }
    steps.sort_unstable();
    Ok(steps)
}

/// One row of `metadata.tsv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub step: u64,
    pub epoch: f64,
    pub valid_loss: f64,
    pub valid_bleu: f64,
}

pub const METADATA_HEADER: &str = "step\tepoch\tvalid_loss\tvalid_bleu";

pub fn append_metadata(path: &Path, info: &CheckpointInfo) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut row = String::new();
    if fresh {
        row.push_str(METADATA_HEADER);
        row.push('\n');
    }
    row.push_str(&format!(
        "{}\t{:.6}\t{:.6}\t{:.2}\n",
        info.step, info.epoch, info.valid_loss, info.valid_bleu
    ));
    f.write_all(row.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_metadata(path: &Path) -> Result<Vec<CheckpointInfo>> {
    let mut rows = Vec::new();
    for (i, line) in files::read_lines(path)?.iter().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("malformed metadata row `{line}`"),
        };
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push(CheckpointInfo {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            valid_loss: f[2].parse().map_err(|_| bad())?,
            valid_bleu: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}
