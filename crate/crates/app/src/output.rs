//! Write-then-rename output so a failed run never leaves partial files.

use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{AppError, Result};

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

/// Named files of a report directory, all computed before anything is written.
pub struct Report {
    files: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new() -> Self {
        Report { files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents.into_bytes()));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// A new directory is assembled under a temporary name and renamed into
    /// place; in an existing directory each file is replaced atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        if dir.is_dir() {
            for (name, bytes) in &self.files {
                write_atomic(&dir.join(name), bytes)?;
            }
            return Ok(());
        }
        let parent = parent_of(dir);
        let tmp = tempfile::Builder::new()
            .prefix(".duacm-report")
            .tempdir_in(parent)
            .map_err(|e| AppError::io(parent, e))?;
        for (name, bytes) in &self.files {
            let p = tmp.path().join(name);
            std::fs::write(&p, bytes).map_err(|e| AppError::io(&p, e))?;
        }
        let staged = tmp.keep();
        std::fs::rename(&staged, dir).map_err(|e| {
            let _ = std::fs::remove_dir_all(&staged);
            AppError::io(dir, e)
        })
    }
}

impl Default for Report {
    fn default() -> Self {
        Self::new()
    }
}
