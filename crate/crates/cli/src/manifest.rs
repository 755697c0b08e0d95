//! Run manifests written into every output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command_line: Vec<String>,
    /// Effective settings after flags, config file and defaults are merged.
    pub config: serde_json::Value,
    /// sha256 of `config` serialized with sorted keys.
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// sha256 of the dataset file, when the command reads one.
    pub dataset_digest: Option<String>,
    /// Other input files by role.
    pub input_digests: BTreeMap<String, String>,
    pub jobs: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seeds: Vec<u64>, started_unix_ms: u128) -> RunManifest {
        // serde_json::Value keeps object keys sorted, so this is canonical
        let config_digest = sha256_hex(config.to_string().as_bytes());
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            config,
            config_digest,
            seeds,
            dataset_digest: None,
            input_digests: BTreeMap::new(),
            jobs: rayon::current_num_threads(),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
        }
    }

    pub fn write(mut self, dir: &Path) -> std::io::Result<()> {
        self.finished_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }
}
