//! Per-run provenance record, written as `run.json` into every output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub dir: PathBuf,
    /// SHA-256 of `train.mmix` followed by `test.mmix`.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Resolved settings after flag, config file and default precedence.
    pub config: serde_json::Value,
    pub precision: String,
    pub dataset: Option<DatasetRef>,
    pub version: String,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
}

impl RunManifest {
    pub fn start(command: &str, precision: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: serde_json::Value::Null,
            precision: precision.to_string(),
            dataset: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            outputs: Vec::new(),
            started: Utc::now(),
            finished: None,
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = Some(Utc::now());
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(FILE_NAME);
        fs::write(&path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in ["train.mmix", "test.mmix"] {
        let path = dir.join(name);
        h.update(fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}
