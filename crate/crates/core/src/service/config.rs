use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::LatencyModel;
use crate::dialogue::DialogueConfig;
use crate::econ::SeverityThresholds;
use crate::extraction::Rubric;

/// Environment variable overriding `data_dir`.
pub const DATA_DIR_ENV: &str = "PULSE_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerSettings {
    pub capacity: u32,
    pub queue_band: u32,
    pub period_minutes: i64,
    pub spike_multiplier: f64,
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        Self {
            capacity: 4,
            queue_band: 2,
            period_minutes: 60,
            spike_multiplier: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheSettings {
    /// Global token budget across all session ledgers.
    pub budget_tokens: u64,
    /// Size of the system prompt primed at call start.
    pub system_prompt_tokens: u64,
    pub latency: LatencyModel,
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self {
            budget_tokens: 2_000_000,
            system_prompt_tokens: 512,
            latency: LatencyModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: String,
    /// When set, requests must carry `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
    pub dialogue: DialogueConfig,
    pub rubric: Rubric,
    pub thresholds: SeverityThresholds,
    pub scheduler: SchedulerSettings,
    pub cache: CacheSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("pulse-data"),
            bind: "127.0.0.1:8080".into(),
            api_token: None,
            dialogue: DialogueConfig::default(),
            rubric: Rubric::default(),
            thresholds: SeverityThresholds::default(),
            scheduler: SchedulerSettings::default(),
            cache: CacheSettings::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` if given (defaults otherwise), then applies the data
    /// directory environment override.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            if !dir.is_empty() {
                cfg.data_dir = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }
}
