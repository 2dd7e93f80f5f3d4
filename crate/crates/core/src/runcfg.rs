//! TOML run configuration shared by every CLI command, plus the config hash
//! embedded in output artifacts for reproducibility auditing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::neural::Variant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown variant {0:?}")]
    BadVariant(String),
    #[error("missing required path: {0}")]
    MissingPath(&'static str),
}

fn default_k() -> usize {
    1000
}
fn default_holdout() -> f64 {
    0.10
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_min_support() -> u64 {
    5
}
fn default_frequent_threshold() -> u64 {
    5
}
fn default_sample_size() -> usize {
    200
}
fn default_embed_dim() -> usize {
    100
}
fn default_cells() -> usize {
    256
}
fn default_layers() -> usize {
    2
}
fn default_dense() -> usize {
    256
}
fn default_place_dense() -> usize {
    16
}
fn default_window() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_variant() -> String {
    "baseline".to_string()
}
fn default_smoothing() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub place_fixture: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_cells")]
    pub lstm_cells: usize,
    #[serde(default = "default_layers")]
    pub lstm_layers: usize,
    #[serde(default = "default_dense")]
    pub dense_units: usize,
    #[serde(default = "default_place_dense")]
    pub place_dense_units: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_true")]
    pub embeddings_frozen: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "default_true")]
    pub resample: bool,
    #[serde(default = "default_true")]
    pub oversample_to_mean: bool,
    pub pretrained: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsSection {
    #[serde(default = "default_min_support")]
    pub min_support: u64,
    #[serde(default = "default_frequent_threshold")]
    pub frequent_threshold: u64,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramSection {
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

impl Default for NGramSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default = "default_k")]
    pub vocab_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub ngram: NGramSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn variant(&self) -> Result<Variant, ConfigError> {
        Variant::parse(&self.model.variant)
            .ok_or_else(|| ConfigError::BadVariant(self.model.variant.clone()))
    }

    /// SHA-256 over the canonical serialized form; identifies the exact
    /// configuration that produced an artifact.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    pub fn corpus_path(&self) -> Result<&Path, ConfigError> {
        self.paths
            .corpus
            .as_deref()
            .ok_or(ConfigError::MissingPath("paths.corpus"))
    }

    pub fn fixture_path(&self) -> Result<&Path, ConfigError> {
        self.paths
            .place_fixture
            .as_deref()
            .ok_or(ConfigError::MissingPath("paths.place_fixture"))
    }

    pub fn embeddings_path(&self) -> Result<&Path, ConfigError> {
        self.paths
            .embeddings
            .as_deref()
            .ok_or(ConfigError::MissingPath("paths.embeddings"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_standard_scale() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.vocab_k, 1000);
        assert_eq!(cfg.model.window, 4);
        assert_eq!(cfg.train.epochs, 20);
        assert!((cfg.train.holdout_fraction - 0.10).abs() < 1e-12);
        assert_eq!(cfg.model.lstm_cells, 256);
        assert_eq!(cfg.model.dense_units, 256);
        assert_eq!(cfg.stats.min_support, 5);
        assert_eq!(cfg.stats.sample_size, 200);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a: RunConfig = toml::from_str("").unwrap();
        let b: RunConfig = toml::from_str("").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c: RunConfig = toml::from_str("vocab_k = 99").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn variant_parse() {
        let cfg: RunConfig = toml::from_str("[model]\nvariant = \"setup2\"").unwrap();
        assert_eq!(cfg.variant().unwrap(), Variant::Setup2);
        let bad: RunConfig = toml::from_str("[model]\nvariant = \"nope\"").unwrap();
        assert!(bad.variant().is_err());
    }
}
