//! Flat `key = value` configuration stored as TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Only secrets and base URLs may come from the environment.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compatibility::{ThresholdConfig, ThresholdError, DEFAULT_A, DEFAULT_T1};
use crate::corpus::DEFAULT_MAX_CHUNK_CHARS;
use crate::embedding::{
    EmbeddingError, EmbeddingProvider, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig,
    DEFAULT_EMBED_API_KEY_ENV,
};
use crate::llm_gateway::{LlmConfig, LlmError, LlmGateway, Mode, RetryPolicy, DEFAULT_API_KEY_ENV};
use crate::prompts::Prompts;

pub const CONFIG_FILE: &str = "truster.toml";
pub const LLM_BASE_URL_ENV: &str = "TRUSTER_LLM_BASE_URL";
pub const EMBED_BASE_URL_ENV: &str = "TRUSTER_EMBED_BASE_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub mode: Mode,
    pub t1: f64,
    pub a: f64,
    /// Knowledge-base sentence count, written by `finalize`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    pub max_chunk_chars: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,

    pub llm_base_url: String,
    pub llm_model: String,
    pub answer_model: String,
    pub llm_api_key_env: String,
    pub llm_fixture_dir: PathBuf,
    pub llm_timeout_seconds: u64,
    pub llm_max_in_flight: usize,
    pub llm_max_retries: u32,
    pub llm_retry_base_ms: u64,

    pub embed_provider: ProviderKind,
    pub embed_base_url: String,
    pub embed_model: String,
    pub embed_dimension: usize,
    pub embed_api_key_env: String,
    pub embed_fixture_dir: PathBuf,
    pub embed_batch_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        let llm = LlmConfig::default();
        let embed = RemoteEmbedderConfig::default();
        Self {
            mode: Mode::Replay,
            t1: DEFAULT_T1,
            a: DEFAULT_A,
            b: None,
            max_chunk_chars: DEFAULT_MAX_CHUNK_CHARS,
            prompts_dir: None,
            llm_base_url: llm.base_url,
            llm_model: llm.model_name.clone(),
            answer_model: llm.model_name,
            llm_api_key_env: DEFAULT_API_KEY_ENV.into(),
            llm_fixture_dir: llm.fixture_dir,
            llm_timeout_seconds: llm.timeout_seconds,
            llm_max_in_flight: llm.max_in_flight,
            llm_max_retries: llm.retry.max_retries,
            llm_retry_base_ms: llm.retry.base_delay.as_millis() as u64,
            embed_provider: ProviderKind::Remote,
            embed_base_url: embed.base_url,
            embed_model: embed.model,
            embed_dimension: embed.dimension,
            embed_api_key_env: DEFAULT_EMBED_API_KEY_ENV.into(),
            embed_fixture_dir: embed.fixture_dir,
            embed_batch_size: embed.batch_size,
        }
    }
}

impl Config {
    /// Reads `path` and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = std::path::absolute(path)
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string(self).map_err(|e| ConfigError::Write {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| ConfigError::Write {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let abs = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        self.llm_fixture_dir = abs(&self.llm_fixture_dir);
        self.embed_fixture_dir = abs(&self.embed_fixture_dir);
        self.prompts_dir = self.prompts_dir.as_deref().map(abs);
    }

    /// Thresholds for a knowledge base of `b` sentences.
    pub fn thresholds(&self, b: usize) -> Result<ThresholdConfig, ConfigError> {
        Ok(ThresholdConfig::new(self.t1, self.a, b)?)
    }

    pub fn prompts(&self) -> Result<Prompts, ConfigError> {
        match &self.prompts_dir {
            None => Ok(Prompts::default()),
            Some(dir) => Prompts::from_dir(dir).map_err(|e| ConfigError::Read {
                path: dir.clone(),
                message: e.to_string(),
            }),
        }
    }

    fn llm_config(&self, model: &str) -> LlmConfig {
        LlmConfig {
            base_url: std::env::var(LLM_BASE_URL_ENV).unwrap_or_else(|_| self.llm_base_url.clone()),
            model_name: model.to_string(),
            api_key_env: self.llm_api_key_env.clone(),
            temperature: 0.0,
            timeout_seconds: self.llm_timeout_seconds,
            mode: self.mode,
            fixture_dir: self.llm_fixture_dir.clone(),
            max_in_flight: self.llm_max_in_flight,
            retry: RetryPolicy {
                max_retries: self.llm_max_retries,
                base_delay: Duration::from_millis(self.llm_retry_base_ms),
            },
        }
    }

    /// Gateway for triplet extraction, on the knowledge base and on answers.
    pub fn extraction_gateway(&self) -> Result<LlmGateway, LlmError> {
        LlmGateway::new(self.llm_config(&self.llm_model))
    }

    /// Gateway for the model whose answers are evaluated.
    pub fn answer_gateway(&self) -> Result<LlmGateway, LlmError> {
        LlmGateway::new(self.llm_config(&self.answer_model))
    }

    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>, EmbeddingError> {
        Ok(match self.embed_provider {
            ProviderKind::Hash => Box::new(HashEmbedder),
            ProviderKind::Remote => Box::new(RemoteEmbedder::new(RemoteEmbedderConfig {
                base_url: std::env::var(EMBED_BASE_URL_ENV)
                    .unwrap_or_else(|_| self.embed_base_url.clone()),
                model: self.embed_model.clone(),
                dimension: self.embed_dimension,
                api_key_env: self.embed_api_key_env.clone(),
                mode: self.mode,
                fixture_dir: self.embed_fixture_dir.clone(),
                timeout_seconds: self.llm_timeout_seconds,
                batch_size: self.embed_batch_size,
                max_in_flight: self.llm_max_in_flight,
                retry: RetryPolicy {
                    max_retries: self.llm_max_retries,
                    base_delay: Duration::from_millis(self.llm_retry_base_ms),
                },
            })?),
        })
    }
}
