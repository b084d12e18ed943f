//! Plain-text and checkpoint file helpers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nmt_core::{checkpoint, ParamStore};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Lines of a UTF-8 file without their terminators.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    write_atomic(path, &checkpoint::encode(store))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint::decode(&bytes).map_err(|e| match e {
        nmt_core::Error::Checkpoint(m) => nmt_core::Error::Checkpoint(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

/// `(lines, whitespace tokens)` of each file.
pub fn corpus_stats(paths: &[PathBuf]) -> Result<Vec<(usize, usize)>> {
    paths
        .iter()
        .map(|p| Ok(nmt_core::corpus::text_stats(&read_text(p)?)))
        .collect()
}
