//! Run manifests written before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Hex SHA-256 of the git blob form of the canonical config JSON.
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

/// SHA-256 over `"blob <len>\0<content>"`, the same digest input git uses for
/// blob objects.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &RunConfig, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Self {
        let json = config.canonical_json();
        RunManifest {
            subcommand: subcommand.to_string(),
            seed: config.train.seed,
            config: serde_json::from_str(&json).expect("canonical json parses"),
            config_hash: blob_hash(json.as_bytes()),
            inputs,
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
