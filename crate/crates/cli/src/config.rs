//! Runtime configuration: a single TOML file with CLI-flag overrides.
//! Unknown keys are rejected so typos surface instead of silently using
//! defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

fn default_corpus_dir() -> String {
    "corpus".into()
}
fn default_model() -> String {
    "model.bin".into()
}
fn default_store() -> String {
    "store.ndjson".into()
}
fn default_address() -> String {
    "127.0.0.1:7401".into()
}
fn default_window_len() -> usize {
    180
}
fn default_hop() -> usize {
    90
}
fn default_debounce_windows() -> usize {
    3
}
fn default_confidence() -> f64 {
    0.6
}
fn default_buffer_capacity() -> usize {
    16
}
fn default_horizon_s() -> f64 {
    1800.0
}
fn default_n_per_class() -> usize {
    50
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_epochs() -> usize {
    30
}
fn default_batch_size() -> usize {
    32
}
fn default_seed() -> u64 {
    42
}
fn default_llm_mode() -> String {
    "off".into()
}
fn default_llm_model() -> String {
    "gpt-4".into()
}
fn default_timeout_s() -> u64 {
    30
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    #[serde(default = "default_corpus_dir")]
    pub corpus_dir: String,
    #[serde(default = "default_model")]
    pub model: String,
    /// Rule DSL file; empty means the built-in default ruleset.
    #[serde(default)]
    pub rules: String,
    #[serde(default = "default_store")]
    pub store: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            corpus_dir: default_corpus_dir(),
            model: default_model(),
            rules: String::new(),
            store: default_store(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySection {
    #[serde(default = "default_address")]
    pub address: String,
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default = "default_debounce_windows")]
    pub debounce_windows: usize,
    #[serde(default = "default_confidence")]
    pub confidence_threshold: f64,
    #[serde(default = "default_buffer_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_horizon_s")]
    pub horizon_s: f64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            address: default_address(),
            window_len: default_window_len(),
            hop: default_hop(),
            debounce_windows: default_debounce_windows(),
            confidence_threshold: default_confidence(),
            buffer_capacity: default_buffer_capacity(),
            horizon_s: default_horizon_s(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            n_per_class: default_n_per_class(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    /// off | mock | http
    #[serde(default = "default_llm_mode")]
    pub mode: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default = "default_llm_model")]
    pub model: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            mode: default_llm_mode(),
            endpoint: String::new(),
            model: default_llm_model(),
            timeout_s: default_timeout_s(),
        }
    }
}

/// The fully resolved configuration a run operates under.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub paths: PathsSection,
    pub gateway: GatewaySection,
    pub train: TrainSection,
    pub llm: LlmSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}
