//! Settings file and flag merging. Flags win over the file, the file wins
//! over built-in defaults.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use morphoforge::prompts::{PromptFormat, Sampling};
use morphoforge::trees::ParamGrid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Rf,
    Xgb,
}

/// Every key is optional and applies to whichever commands use it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub alpha: Option<f64>,
    pub model: Option<ModelChoice>,
    pub grid: Option<ParamGrid>,
    pub test_fraction: Option<f64>,
    pub keep_all_features: Option<bool>,
    pub top: Option<usize>,
    pub endpoint: Option<String>,
    pub n_examples: Option<usize>,
    pub sampling: Option<Sampling>,
    pub format: Option<PromptFormat>,
    pub templates: Option<PathBuf>,
    pub max_value: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parses a flag value with the type's serde name, e.g. `only_target_class`.
pub fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{what} {}: {e}", path.display())))
}
