//! TOML run configuration. Flags always win over file values; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use videonav::corpus::CorpusParams;
use videonav::http::ServerConfig;
use videonav::reward::RewardWeights;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub policy: Option<String>,
    pub backend: Option<String>,
    pub budget: Option<usize>,
    pub budgets: Option<Vec<usize>>,
    pub init: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub server: Option<ServerConfig>,
    pub weights: Option<RewardWeights>,
    pub corpus_params: Option<CorpusParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("--config: cannot read {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            CliError::validation(format!("--config: invalid TOML in {}: {e}", path.display()))
        })
    }
}

/// `flag.or(config value)`, with a named error when both are missing.
pub fn require<T: Clone>(
    flag: Option<T>,
    file: Option<T>,
    flag_name: &str,
) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::validation(format!("missing {flag_name}")))
}
