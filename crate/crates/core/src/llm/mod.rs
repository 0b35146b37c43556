//! Chat-completion gateway.
//!
//! Operators talk to an [`LlmClient`], which wraps one [`LlmBackend`] (live
//! HTTP or a deterministic mock corpus), caps in-flight requests and appends
//! every call to the run transcript.

mod http;
mod mock;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use mock::{MissPolicy, MockBackend};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    BackendError { status: u16, body: String },
    #[error("mock corpus has no entry for `{0}`")]
    CorpusMiss(String),
    #[error("response contained no code")]
    EmptyCode,
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("failed to load corpus {path}: {message}")]
    Corpus { path: String, message: String },
}

/// What a prompt is about; used for mock corpus keying and lineage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptKey {
    pub block: String,
    pub category: String,
    pub persona: String,
}

impl PromptKey {
    pub fn new(block: &str, category: &str, persona: &str) -> Self {
        Self {
            block: block.to_string(),
            category: category.to_string(),
            persona: persona.to_string(),
        }
    }

    /// `block:category:persona`
    pub fn label(&self) -> String {
        format!("{}:{}:{}", self.block, self.category, self.persona)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.label().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub key: PromptKey,
    /// Source the mock backend echoes back on an identity fallback.
    #[serde(skip)]
    pub subject_source: String,
}

impl ChatRequest {
    /// Hash of everything sent over the wire.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update([0u8]);
        h.update(self.user_text.as_bytes());
        h.update([0u8]);
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update(self.max_tokens.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: [f64; 2],
    pub max_tokens: [u32; 2],
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: [0.05, 0.4],
            max_tokens: [600, 1400],
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let [t_lo, t_hi] = self.temperature;
        let [n_lo, n_hi] = self.max_tokens;
        if !(t_lo.is_finite() && t_hi.is_finite()) || t_lo > t_hi || t_lo < 0.0 || t_hi > 2.0 {
            return Err(LlmError::Config(format!(
                "temperature range [{t_lo}, {t_hi}] must be ordered and within [0, 2]"
            )));
        }
        if n_lo > n_hi || n_lo == 0 {
            return Err(LlmError::Config(format!(
                "max_tokens range [{n_lo}, {n_hi}] must be ordered and positive"
            )));
        }
        Ok(())
    }
}

/// Draws a temperature and token budget for one prompt.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, cfg: &SamplingConfig) -> Result<GenerationParams, LlmError> {
    cfg.validate()?;
    let [t_lo, t_hi] = cfg.temperature;
    let [n_lo, n_hi] = cfg.max_tokens;
    Ok(GenerationParams {
        temperature: if t_lo == t_hi { t_lo } else { rng.gen_range(t_lo..=t_hi) },
        max_tokens: rng.gen_range(n_lo..=n_hi),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub raw_text: String,
    pub backend_id: String,
    pub latency: Duration,
    pub request_digest: String,
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;

    /// Cheap reachability probe.
    fn ping(&self) -> Result<(), LlmError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub timestamp: String,
    pub digest: String,
    pub request: ChatRequest,
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// Append-only log of every LLM call.
#[derive(Default)]
pub struct Transcript {
    file: Mutex<Option<BufWriter<File>>>,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(Some(BufWriter::new(file))),
            records: Mutex::new(Vec::new()),
        })
    }

    fn append(&self, record: TranscriptRecord) {
        if let Some(w) = self.file.lock().expect("transcript lock").as_mut() {
            let line = serde_json::to_string(&record).expect("transcript record serializes");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                log::warn!("failed to write transcript record: {e}");
            }
        }
        self.records.lock().expect("transcript lock").push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().expect("transcript lock").clone()
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().expect("semaphore lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore lock");
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmClient {
    backend: Box<dyn LlmBackend>,
    transcript: Transcript,
    in_flight: Semaphore,
}

impl LlmClient {
    pub fn new(backend: Box<dyn LlmBackend>, transcript: Transcript, max_concurrent: usize) -> Self {
        Self {
            backend,
            transcript,
            in_flight: Semaphore::new(max_concurrent),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn ping(&self) -> Result<(), LlmError> {
        self.backend.ping()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let result = self.backend.complete(request);
        let latency = started.elapsed();
        let digest = request.digest();
        let (response, error) = match &result {
            Ok(text) => (Some(text.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.transcript.append(TranscriptRecord {
            timestamp: chrono::Utc::now().to_rfc3339(),
            digest: digest.clone(),
            request: request.clone(),
            response,
            error,
            latency_ms: latency.as_millis() as u64,
        });
        Ok(LlmResponse {
            raw_text: result?,
            backend_id: self.backend.id().to_string(),
            latency,
            request_digest: digest,
        })
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Pulls bare code out of a model reply: the body of the first fenced block
/// if there is one, otherwise the whole text. Leading blank lines, trailing
/// whitespace and stray trailing fences are removed; indentation of the
/// first code line is kept.
pub fn extract_code(raw_text: &str) -> Result<String, LlmError> {
    let lines: Vec<&str> = raw_text.lines().collect();
    let body: &[&str] = match lines.iter().position(|l| is_fence(l)) {
        Some(open) => {
            let rest = &lines[open + 1..];
            match rest.iter().position(|l| is_fence(l)) {
                Some(close) => &rest[..close],
                None => rest,
            }
        }
        None => &lines,
    };
    let start = body.iter().position(|l| !l.trim().is_empty()).unwrap_or(body.len());
    let mut code = body[start..].join("\n");
    loop {
        let trimmed = code.trim_end();
        match trimmed.strip_suffix("```") {
            Some(stripped) => code = stripped.to_string(),
            None => {
                code.truncate(trimmed.len());
                break;
            }
        }
    }
    if code.trim().is_empty() {
        return Err(LlmError::EmptyCode);
    }
    Ok(code)
}
