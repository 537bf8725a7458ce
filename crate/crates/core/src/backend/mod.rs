//! Dispatching requests to a model endpoint.
//!
//! Three routes share one entry point, [`Dispatcher::send`]:
//!
//! * `LiveHttp`: a chat-completion style endpoint ([`http::HttpBackend`]),
//!   with bounded concurrency, retries and exponential backoff.
//! * `Replay`: answers only from the on-disk cache. No network.
//! * `SyntheticMock`: deterministic replies from a latent quality table
//!   ([`mock::SyntheticMock`]), used for desk-scale runs and tests.
//!
//! Replies that came from a model (live or mock) are written through to the
//! replay cache, keyed by a content fingerprint of the request.

pub mod cache;
pub mod http;
pub mod mock;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::prompt::EvalRequest;
use crate::task::AspectKind;

pub use cache::ReplayCache;
pub use mock::{LatentEntry, LatentTable, MockSettings, SyntheticMock};

/// Refusal phrases matched when no custom list is configured.
pub const DEFAULT_REFUSAL_KEYWORDS: &[&str] = &["I am sorry, but I cannot", "cannot process these images"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LiveHttp,
    Replay,
    SyntheticMock,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::LiveHttp => "live_http",
            BackendKind::Replay => "replay",
            BackendKind::SyntheticMock => "synthetic_mock",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub retry_limit: u32,
    /// Per-attempt timeout in seconds.
    pub timeout_secs: f64,
    pub cache_dir: PathBuf,
    pub refusal_keywords: Vec<String>,
    /// First backoff ceiling; doubles per attempt, full jitter.
    pub backoff_initial_ms: u64,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl BackendConfig {
    pub fn new(kind: BackendKind, model_name: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            endpoint_url: None,
            model_name: model_name.into(),
            api_key_env: None,
            max_in_flight: 4,
            retry_limit: 3,
            timeout_secs: 60.0,
            cache_dir: cache_dir.into(),
            refusal_keywords: DEFAULT_REFUSAL_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            backoff_initial_ms: 1000,
            max_tokens: 512,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |msg: &str| Err(BackendError::Config(msg.to_string()));
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be at least 1");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout must be positive");
        }
        if self.model_name.is_empty() {
            return bad("model_name is empty");
        }
        if self.kind == BackendKind::LiveHttp {
            if self.endpoint_url.as_deref().unwrap_or("").is_empty() {
                return bad("live backend needs an endpoint URL");
            }
            if self.api_key_env.as_deref().unwrap_or("").is_empty() {
                return bad("live backend needs an API key environment variable");
            }
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyStatus {
    Ok,
    Refused,
    TransportError,
    RateLimited,
    Timeout,
}

impl ReplyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplyStatus::Ok => "ok",
            ReplyStatus::Refused => "refused",
            ReplyStatus::TransportError => "transport_error",
            ReplyStatus::RateLimited => "rate_limited",
            ReplyStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReply {
    pub instance_id: String,
    pub aspect: AspectKind,
    pub text: String,
    pub status: ReplyStatus,
    pub request_fingerprint: String,
    pub latency_ms: u64,
}

/// Failures that are not a property of one reply: bad configuration,
/// credentials, a replay miss, or a request the backend cannot serve.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("replay cache has no reply for fingerprint {0}")]
    CacheMiss(String),
    #[error("request for {0} carries no images")]
    NoImages(String),
    #[error("synthetic backend: {0}")]
    Mock(#[from] mock::MockError),
    #[error("replay cache I/O: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// What a single call to a backend can report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallError {
    Auth(String),
    RateLimited,
    Timeout,
    Transport { message: String, retryable: bool },
    Fatal(String),
}

/// A model endpoint that turns one request into reply text.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &EvalRequest) -> Result<String, CallError>;
}

/// Case-insensitive substring match against the refusal phrases.
pub fn detect_refusal(text: &str, keywords: &[String]) -> bool {
    let lower = text.to_lowercase();
    keywords.iter().any(|k| !k.is_empty() && lower.contains(&k.to_lowercase()))
}

/// [`detect_refusal`] with the default phrase list.
pub fn detect_refusal_default(text: &str) -> bool {
    let keywords: Vec<String> = DEFAULT_REFUSAL_KEYWORDS.iter().map(|s| s.to_string()).collect();
    detect_refusal(text, &keywords)
}

/// SHA-256 over the model name, prompt text and every image's bytes.
/// Transport settings do not participate.
pub fn request_fingerprint(request: &EvalRequest, model_name: &str) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(b"request-v1");
    field(model_name.as_bytes());
    field(request.text.as_bytes());
    for img in &request.images {
        field(img.media_type().as_bytes());
        field(img.bytes());
    }
    hex::encode(h.finalize())
}

pub struct Dispatcher {
    cfg: BackendConfig,
    backend: Option<Arc<dyn Backend>>,
    cache: ReplayCache,
    permits: Arc<Semaphore>,
}

impl Dispatcher {
    /// Builds the route named by `cfg.kind`. The mock route needs its latent table.
    pub fn from_config(cfg: BackendConfig, mock: Option<SyntheticMock>) -> Result<Self, BackendError> {
        cfg.validate()?;
        let backend: Option<Arc<dyn Backend>> = match cfg.kind {
            BackendKind::Replay => None,
            BackendKind::LiveHttp => Some(Arc::new(http::HttpBackend::from_config(&cfg)?)),
            BackendKind::SyntheticMock => Some(Arc::new(
                mock.ok_or_else(|| BackendError::Config("synthetic backend needs a latent table".into()))?,
            )),
        };
        Ok(Self::build(cfg, backend))
    }

    /// Uses a caller-supplied backend for the live route.
    pub fn with_backend(cfg: BackendConfig, backend: Arc<dyn Backend>) -> Result<Self, BackendError> {
        cfg.validate()?;
        if cfg.kind == BackendKind::Replay {
            return Err(BackendError::Config("replay dispatch takes no backend".into()));
        }
        Ok(Self::build(cfg, Some(backend)))
    }

    fn build(cfg: BackendConfig, backend: Option<Arc<dyn Backend>>) -> Self {
        Self {
            cache: ReplayCache::new(cfg.cache_dir.clone()),
            permits: Arc::new(Semaphore::new(cfg.max_in_flight)),
            backend,
            cfg,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }

    pub fn fingerprint(&self, request: &EvalRequest) -> String {
        request_fingerprint(request, &self.cfg.model_name)
    }

    pub async fn send(&self, request: &EvalRequest) -> Result<RawReply, BackendError> {
        if request.images.is_empty() {
            return Err(BackendError::NoImages(request.instance_id.clone()));
        }
        let fingerprint = self.fingerprint(request);
        let reply = |text: String, status: ReplyStatus, latency_ms: u64| RawReply {
            instance_id: request.instance_id.clone(),
            aspect: request.aspect,
            text,
            status,
            request_fingerprint: fingerprint.clone(),
            latency_ms,
        };

        let Some(backend) = &self.backend else {
            let (text, meta) = self
                .cache
                .get(&fingerprint)?
                .ok_or_else(|| BackendError::CacheMiss(fingerprint.clone()))?;
            let status = self.status_of(&text);
            return Ok(reply(text, status, meta.latency_ms));
        };

        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        let started = Instant::now();
        let mut attempt = 0u32;
        let outcome = loop {
            let call = tokio::time::timeout(self.cfg.timeout(), backend.complete(request)).await;
            let result = call.unwrap_or(Err(CallError::Timeout));
            let status = match result {
                Ok(text) => break Ok(text),
                Err(CallError::Auth(msg)) => return Err(BackendError::Auth(msg)),
                Err(CallError::Fatal(msg)) => break Err((ReplyStatus::TransportError, msg)),
                Err(CallError::Transport { message, retryable: false }) => {
                    break Err((ReplyStatus::TransportError, message))
                }
                Err(CallError::Transport { message, .. }) => (ReplyStatus::TransportError, message),
                Err(CallError::RateLimited) => (ReplyStatus::RateLimited, "rate limited".to_string()),
                Err(CallError::Timeout) => (ReplyStatus::Timeout, "timed out".to_string()),
            };
            if attempt >= self.cfg.retry_limit {
                break Err(status);
            }
            tokio::time::sleep(self.backoff(attempt)).await;
            attempt += 1;
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        match outcome {
            Ok(text) => {
                let status = self.status_of(&text);
                self.cache.put(&fingerprint, &text, &self.cfg.model_name, request, latency_ms)?;
                Ok(reply(text, status, latency_ms))
            }
            Err((status, message)) => {
                tracing::warn!(instance = %request.instance_id, aspect = %request.aspect, ?status, %message, "request failed");
                Ok(reply(String::new(), status, latency_ms))
            }
        }
    }

    /// Sends every request with at most `max_in_flight` outstanding.
    /// Results come back in input order.
    pub async fn send_all(&self, requests: &[EvalRequest]) -> Vec<Result<RawReply, BackendError>> {
        futures::future::join_all(requests.iter().map(|r| self.send(r))).await
    }

    fn status_of(&self, text: &str) -> ReplyStatus {
        if detect_refusal(text, &self.cfg.refusal_keywords) {
            ReplyStatus::Refused
        } else {
            ReplyStatus::Ok
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ceiling = self.cfg.backoff_initial_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(rand::rng().random_range(0..=ceiling))
    }
}
