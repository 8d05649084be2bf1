//! Output files of one run. Every CSV starts with a `# config_hash=` line,
//! every JSONL record carries a `config_hash` field, and every file is
//! listed in the manifest with its SHA-256 digest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    /// relative to the output directory
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    config_hash: String,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path, config_hash: &str) -> Result<Self, RunError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `bytes` to `name` and records it.
    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        fs::write(self.dir.join(name), bytes)?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Runs `fill` on a buffer that already holds the hash comment line.
    pub fn csv_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> mvlov_core::Result<()>,
    ) -> Result<(), RunError> {
        let mut buf = format!("# config_hash={}\n", self.config_hash).into_bytes();
        fill(&mut buf)?;
        self.raw(name, &buf)
    }

    /// A CSV of string cells. Numbers should already be formatted with
    /// [`num`] so output is identical across platforms.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
        let mut text = format!("# config_hash={}\n{}\n", self.config_hash, header.join(","));
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.raw(name, text.as_bytes())
    }

    /// One JSON object per line, each tagged with the config hash.
    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<(), RunError> {
        let mut text = String::new();
        for r in records {
            let mut obj = match serde_json::to_value(r).map_err(|e| RunError::Config(e.to_string()))? {
                Value::Object(m) => m,
                other => {
                    let mut m = Map::new();
                    m.insert("value".into(), other);
                    m
                }
            };
            obj.insert("config_hash".into(), Value::String(self.config_hash.clone()));
            text.push_str(&Value::Object(obj).to_string());
            text.push('\n');
        }
        self.raw(name, text.as_bytes())
    }

    /// Binary output produced by `fill`.
    pub fn binary(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> mvlov_core::Result<()>,
    ) -> Result<(), RunError> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.raw(name, &buf)
    }
}

/// Shortest round-trip decimal form; `NaN` and `inf` spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}
