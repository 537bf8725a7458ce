//! Chat-completion style HTTP backend.
//!
//! Request body:
//!
//! ```json
//! {"model": "...",
//!  "messages": [{"role": "user", "content": [
//!      {"type": "text", "text": "..."},
//!      {"type": "image", "media_type": "image/png", "data": "<base64>"}]}],
//!  "max_tokens": 512, "temperature": 0.0}
//! ```
//!
//! The reply text is read from `choices[0].message.content` (string or list
//! of text parts), or from a top-level `content` list of text parts.

use async_trait::async_trait;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, CallError};
use crate::media::encode_image;
use crate::prompt::EvalRequest;

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
    model: String,
    max_tokens: u32,
    temperature: f64,
}

impl HttpBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let var = cfg.api_key_env.clone().unwrap_or_default();
        let api_key = std::env::var(&var)
            .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?;
        Self::new(cfg, api_key)
    }

    pub fn new(cfg: &BackendConfig, api_key: String) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: cfg.endpoint_url.clone().unwrap_or_default(),
            api_key,
            model: cfg.model_name.clone(),
            max_tokens: cfg.max_tokens,
            temperature: cfg.temperature,
        })
    }
}

/// The JSON body sent for one request.
pub fn request_body(request: &EvalRequest, model: &str, max_tokens: u32, temperature: f64) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.text})];
    content.extend(request.images.iter().map(|img| {
        let enc = encode_image(img);
        json!({"type": "image", "media_type": enc.media_type, "data": enc.data})
    }));
    json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": max_tokens,
        "temperature": temperature,
    })
}

fn text_parts(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            (!texts.is_empty()).then(|| texts.concat())
        }
        _ => None,
    }
}

/// Reply text from a response body, in either supported shape.
pub fn reply_text(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .and_then(text_parts)
        .or_else(|| body.get("content").and_then(text_parts))
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &EvalRequest) -> Result<String, CallError> {
        let body = request_body(request, &self.model, self.max_tokens, self.temperature);
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    CallError::Timeout
                } else {
                    CallError::Transport {
                        message: e.to_string(),
                        retryable: true,
                    }
                }
            })?;
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(CallError::Auth(format!("HTTP {status}")));
        }
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(CallError::RateLimited);
        }
        if !status.is_success() {
            let retryable = status.is_server_error() || status == StatusCode::REQUEST_TIMEOUT;
            return Err(CallError::Transport {
                message: format!("HTTP {status}"),
                retryable,
            });
        }
        let json: Value = resp.json().await.map_err(|e| {
            if e.is_timeout() {
                CallError::Timeout
            } else {
                CallError::Transport {
                    message: format!("unreadable response body: {e}"),
                    retryable: false,
                }
            }
        })?;
        reply_text(&json).ok_or_else(|| CallError::Transport {
            message: "response body has no reply text".into(),
            retryable: false,
        })
    }
}
