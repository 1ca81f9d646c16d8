//! Chat-completion client with bounded retry, and the backend switch.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_API_KEY_ENV: &str = "TOURGEN_API_KEY";

const SYSTEM_MESSAGE: &str = "You write tourist activity schedules as plain tuple lines.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub finish_reason: Option<String>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response payload: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<BackendError> },
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Whether the service answered but the answer was unusable, as opposed
    /// to the service being unreachable or refusing requests.
    pub fn is_content_failure(&self) -> bool {
        matches!(self, BackendError::Malformed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Environment variable holding the bearer token; unset means no header.
    pub api_key_env: String,
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 2048,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_ms: 60_000,
            max_retries: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
        }
    }
}

impl RemoteConfig {
    pub fn request(&self, prompt: String) -> GenRequest {
        GenRequest { prompt, model: self.model.clone(), temperature: self.temperature, max_tokens: self.max_tokens }
    }

    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    http: Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    let v = headers.get(RETRY_AFTER)?.to_str().ok()?;
    v.trim().parse::<f64>().ok().filter(|s| *s >= 0.0).map(Duration::from_secs_f64)
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        if cfg.endpoint.is_empty() {
            return Err(BackendError::Config("remote endpoint is not configured".into()));
        }
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            warn!("{} is not set; sending requests without credentials", cfg.api_key_env);
        }
        let http =
            Client::builder().timeout(Duration::from_millis(cfg.timeout_ms)).build().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { cfg, http, api_key })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn exchange(&self, req: &GenRequest) -> Result<GenResponse, (BackendError, Option<Duration>)> {
        let body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": req.prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut rb = self.http.post(&self.cfg.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| {
            let err = if e.is_timeout() { BackendError::Timeout } else { BackendError::Transport(e.to_string()) };
            (err, None)
        })?;
        let status = resp.status();
        let wait = retry_after(resp.headers());
        let text = resp.text().map_err(|e| {
            let err = if e.is_timeout() { BackendError::Timeout } else { BackendError::Transport(e.to_string()) };
            (err, None)
        })?;
        if status != StatusCode::OK {
            return Err((BackendError::Status { status: status.as_u16(), body: text }, wait));
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| (BackendError::Malformed(e.to_string()), None))?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| (BackendError::Malformed("no choices".into()), None))?;
        let content = choice.message.content.ok_or_else(|| (BackendError::Malformed("choice has no content".into()), None))?;
        Ok(GenResponse { text: content, usage: wire.usage, finish_reason: choice.finish_reason })
    }

    /// One chat-completion call, retried on timeouts, transport errors, 429
    /// and 5xx with exponential backoff (a `Retry-After` header, if present,
    /// replaces the computed delay, still capped).
    pub fn complete(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        req.validate()?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.exchange(req) {
                Ok(r) => {
                    if let Some(u) = r.usage {
                        debug!("tokens: prompt {} completion {}", u.prompt_tokens, u.completion_tokens);
                    }
                    return Ok(r);
                }
                Err((e, wait)) if e.retryable() && attempt <= self.cfg.max_retries => {
                    let cap = Duration::from_millis(self.cfg.backoff_max_ms);
                    let delay = wait.map_or_else(|| self.cfg.backoff(attempt), |w| w.min(cap));
                    warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err((e, _)) if e.retryable() => {
                    return Err(BackendError::Exhausted { attempts: attempt, last: Box::new(e) });
                }
                Err((e, _)) => return Err(e),
            }
        }
    }
}

/// Where chain text comes from.
pub enum Backend {
    Remote(RemoteClient),
    Fallback,
}

impl Backend {
    pub fn is_remote(&self) -> bool {
        matches!(self, Backend::Remote(_))
    }
}
