//! Line-oriented run manifest.
//!
//! ```text
//! config seed=1
//! stage fit seconds=12.5
//! file fits/fit_4_identity.csv sha256=<hex> bytes=51234
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Manifest {
    config: Vec<(String, String)>,
    stages: Vec<(String, Duration)>,
    files: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn config(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.config.push((key.into(), value.into()));
    }

    pub fn stage(&mut self, name: impl Into<String>, elapsed: Duration) {
        self.stages.push((name.into(), elapsed));
    }

    pub fn file(&mut self, path: impl Into<PathBuf>) {
        self.files.push(path.into());
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Write the manifest; file paths are listed relative to `root`.
    pub fn write(&self, root: &Path, path: &Path) -> Result<(), CliError> {
        let mut out = Vec::new();
        for (k, v) in &self.config {
            writeln!(out, "config {k}={v}").expect("write to memory");
        }
        for (name, d) in &self.stages {
            writeln!(out, "stage {name} seconds={:.3}", d.as_secs_f64()).expect("write to memory");
        }
        let mut files = self.files.clone();
        files.sort();
        files.dedup();
        for f in files {
            let (hash, bytes) = sha256_file(&f)?;
            let rel = f.strip_prefix(root).unwrap_or(&f);
            writeln!(out, "file {} sha256={hash} bytes={bytes}", rel.display()).expect("write to memory");
        }
        std::fs::write(path, out).map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_files_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, b"abc").unwrap();
        let mut m = Manifest::new();
        m.config("seed", "3");
        m.stage("fit", Duration::from_millis(1500));
        m.file(&a);
        let path = dir.path().join("manifest.txt");
        m.write(dir.path(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("config seed=3\n"));
        assert!(text.contains("stage fit seconds=1.500\n"));
        assert!(text.contains(
            "file a.csv sha256=ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad bytes=3\n"
        ));
    }
}
