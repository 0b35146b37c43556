//! OpenAI-compatible `POST /chat/completions` backend with retries.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, LlmBackend, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    /// Relative jitter applied to each backoff, e.g. 0.2 for +/-20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 1000,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        let base = self.initial_backoff_ms.saturating_mul(1u64 << retry.min(20)) as f64;
        let factor = if self.jitter > 0.0 {
            rand::thread_rng().gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_millis((base * factor).max(0.0) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    id: String,
}

enum Attempt {
    Done(String),
    Transient(String, Option<u16>),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        let id = format!("http:{}", cfg.model);
        Ok(Self { cfg, client, id })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.client.post(self.endpoint("chat/completions")).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string(), None),
        };
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if status.is_success() {
            return match parse_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            };
        }
        if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Transient(text, Some(status.as_u16()))
        } else {
            Attempt::Fatal(LlmError::BackendError {
                status: status.as_u16(),
                body: text,
            })
        }
    }
}

fn parse_content(text: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::Protocol(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
}

impl LlmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = self.body(request);
        let attempts = self.cfg.retry.max_retries + 1;
        let mut last = (String::new(), None);
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.retry.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg, status) => {
                    log::debug!("llm attempt {} failed: {msg}", attempt + 1);
                    last = (msg, status);
                }
            }
        }
        Err(match last {
            (body, Some(status)) => LlmError::BackendError { status, body },
            (message, None) => LlmError::BackendUnavailable { attempts, message },
        })
    }

    fn ping(&self) -> Result<(), LlmError> {
        let mut req = self.client.get(self.endpoint("models"));
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        req.send().map(|_| ()).map_err(|e| LlmError::BackendUnavailable {
            attempts: 1,
            message: e.to_string(),
        })
    }
}
