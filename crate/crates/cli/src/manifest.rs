//! Run manifest: config hash, tool version, wall-clock time and a checksum
//! for every emitted file.

use std::path::{Path, PathBuf};

use msglab::io::sha256_file;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub config_hash: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn build(kind: &str, config_hash: &str, out: &Path, files: &[PathBuf], seconds: f64) -> Result<Self, CliError> {
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let rel = f.strip_prefix(out).unwrap_or(f);
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let bytes = std::fs::metadata(f)?.len();
            entries.push(FileEntry { path, sha256: sha256_file(f)?, bytes });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        Ok(Self {
            tool: "msglab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            kind: kind.into(),
            config_hash: config_hash.into(),
            wall_clock_seconds: seconds,
            files: entries,
        })
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, CliError> {
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self).map_err(msglab::Error::from)? + "\n")?;
        Ok(path)
    }

    pub fn read(out: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(out.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text).map_err(msglab::Error::from)?)
    }

    /// Paths whose current checksum differs from the recorded one.
    pub fn verify(&self, out: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|e| sha256_file(&out.join(&e.path)).map_or(true, |h| h != e.sha256))
            .map(|e| e.path.clone())
            .collect()
    }
}
