//! Chat-completion client with record/replay fixtures.
//!
//! Every exchange is addressed by a SHA-256 key over the instructions, the
//! user content and the model name. In `replay` mode answers come only from
//! the fixture directory and no socket is ever opened; `record` performs the
//! live call and stores the exchange as one JSON file per key.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "TRUSTER_LLM_API_KEY";
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Record,
    Replay,
}

impl Mode {
    pub fn uses_network(self) -> bool {
        !matches!(self, Mode::Replay)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode `{other}` (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("environment variable {var} holding the API key is not set")]
    MissingApiKey { var: String },
    #[error("request to {url} failed after {attempts} attempts: {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("no recorded exchange for fixture key {key} in {dir}")]
    FixtureMissing { key: String, dir: PathBuf },
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("unexpected response from provider: {0}")]
    BadResponse(String),
}

/// Transport and persistence settings for chat completions.
#[derive(Debug, Clone)]
pub struct LlmConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_seconds: u64,
    pub mode: Mode,
    pub fixture_dir: PathBuf,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.0,
            timeout_seconds: 120,
            mode: Mode::Live,
            fixture_dir: PathBuf::from("fixtures/llm"),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles for each subsequent one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub fixture_key: String,
    pub model_name: String,
    pub assistant_instructions: String,
    pub user_content: String,
    pub response_text: String,
}

/// SHA-256 over the length-prefixed instructions, user content and model.
pub fn fixture_key(assistant_instructions: &str, user_content: &str, model_name: &str) -> String {
    content_hash(&[assistant_instructions, user_content, model_name])
}

/// Hex SHA-256 over length-prefixed parts; used for every fixture address.
pub(crate) fn content_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Directory of JSON fixtures, one file per key. Reads share a lock, writes
/// take it exclusively.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    lock: RwLock<()>,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            lock: RwLock::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>, LlmError> {
        let _guard = self.lock.read().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(LlmError::Fixture {
                    path,
                    message: e.to_string(),
                })
            }
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| LlmError::Fixture {
                path,
                message: e.to_string(),
            })
    }

    pub fn save<T: Serialize>(&self, key: &str, value: &T) -> Result<PathBuf, LlmError> {
        let _guard = self.lock.write().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(key);
        let fail = |message: String| LlmError::Fixture {
            path: path.clone(),
            message,
        };
        fs::create_dir_all(&self.dir).map_err(|e| fail(e.to_string()))?;
        let mut body = serde_json::to_string_pretty(value).map_err(|e| fail(e.to_string()))?;
        body.push('\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|e| fail(e.to_string()))?;
        fs::rename(&tmp, &path).map_err(|e| fail(e.to_string()))?;
        Ok(path)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub(crate) struct InFlight {
    available: Mutex<usize>,
    cond: Condvar,
}

pub(crate) struct Permit<'a>(&'a InFlight);

impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        Self {
            available: Mutex::new(limit.max(1)),
            cond: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cond.notify_one();
    }
}

/// Minimal JSON-over-HTTP poster shared by the chat and embedding clients.
#[derive(Debug)]
pub(crate) struct HttpPoster {
    client: reqwest::blocking::Client,
    api_key: String,
    retry: RetryPolicy,
}

impl HttpPoster {
    pub(crate) fn new(api_key: String, timeout: Duration, retry: RetryPolicy) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport {
                url: String::new(),
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            api_key,
            retry,
        })
    }

    /// POSTs `body`, retrying on connection errors, 429 and 5xx.
    pub(crate) fn post_json(&self, url: &str, body: &Value) -> Result<Value, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = self
                .client
                .post(url)
                .bearer_auth(&self.api_key)
                .json(body)
                .send();
            let (retryable, message) = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| LlmError::BadResponse(e.to_string()));
                    }
                    let text = resp.text().unwrap_or_default();
                    let retryable = status.is_server_error() || status.as_u16() == 429;
                    (retryable, format!("HTTP {status}: {}", truncate(&text, 300)))
                }
                Err(e) => (true, e.to_string()),
            };
            if !retryable || attempts > self.retry.max_retries {
                return Err(LlmError::Transport {
                    url: url.to_string(),
                    attempts,
                    message,
                });
            }
            let delay = self.retry.delay_before_retry(attempts - 1);
            log::warn!("{url}: {message}; retrying in {delay:?}");
            std::thread::sleep(delay);
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub(crate) fn read_api_key(var: &str) -> Result<String, LlmError> {
    match std::env::var(var) {
        Ok(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(LlmError::MissingApiKey { var: var.to_string() }),
    }
}

/// The single entry point for chat completions.
#[derive(Debug)]
pub struct LlmGateway {
    config: LlmConfig,
    store: FixtureStore,
    poster: Option<HttpPoster>,
    in_flight: InFlight,
}

impl LlmGateway {
    /// Fails with [`LlmError::MissingApiKey`] when a network mode is selected
    /// and the key variable is unset.
    pub fn new(config: LlmConfig) -> Result<Self, LlmError> {
        let poster = if config.mode.uses_network() {
            let key = read_api_key(&config.api_key_env)?;
            Some(HttpPoster::new(
                key,
                Duration::from_secs(config.timeout_seconds.max(1)),
                config.retry,
            )?)
        } else {
            None
        };
        Ok(Self {
            store: FixtureStore::new(config.fixture_dir.clone()),
            in_flight: InFlight::new(config.max_in_flight),
            poster,
            config,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    /// Gateway sharing this one's transport settings but talking to `model`.
    pub fn with_model(&self, model: &str) -> Result<Self, LlmError> {
        let mut config = self.config.clone();
        config.model_name = model.to_string();
        Self::new(config)
    }

    pub fn chat_complete(
        &self,
        assistant_instructions: &str,
        user_content: &str,
    ) -> Result<String, LlmError> {
        let key = fixture_key(assistant_instructions, user_content, &self.config.model_name);
        match self.config.mode {
            Mode::Replay => {
                let exchange: ChatExchange =
                    self.store
                        .load(&key)?
                        .ok_or_else(|| LlmError::FixtureMissing {
                            key: key.clone(),
                            dir: self.store.dir().to_path_buf(),
                        })?;
                Ok(exchange.response_text)
            }
            Mode::Live => self.call(assistant_instructions, user_content),
            Mode::Record => {
                let response_text = self.call(assistant_instructions, user_content)?;
                let exchange = ChatExchange {
                    fixture_key: key.clone(),
                    model_name: self.config.model_name.clone(),
                    assistant_instructions: assistant_instructions.to_string(),
                    user_content: user_content.to_string(),
                    response_text: response_text.clone(),
                };
                self.store.save(&key, &exchange)?;
                Ok(response_text)
            }
        }
    }

    fn call(&self, assistant_instructions: &str, user_content: &str) -> Result<String, LlmError> {
        let poster = self
            .poster
            .as_ref()
            .expect("network modes always construct a poster");
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": assistant_instructions},
                {"role": "user", "content": user_content},
            ],
        });
        let _permit = self.in_flight.acquire();
        let response = poster.post_json(&url, &body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                LlmError::BadResponse(format!(
                    "missing choices[0].message.content in {}",
                    truncate(&response.to_string(), 300)
                ))
            })
    }
}

/// Writes an exchange directly into a fixture directory. Used to seed
/// fixtures whose responses were authored by hand.
pub fn store_exchange(
    dir: &Path,
    model_name: &str,
    assistant_instructions: &str,
    user_content: &str,
    response_text: &str,
) -> Result<PathBuf, LlmError> {
    let key = fixture_key(assistant_instructions, user_content, model_name);
    let exchange = ChatExchange {
        fixture_key: key.clone(),
        model_name: model_name.to_string(),
        assistant_instructions: assistant_instructions.to_string(),
        user_content: user_content.to_string(),
        response_text: response_text.to_string(),
    };
    FixtureStore::new(dir).save(&key, &exchange)
}
