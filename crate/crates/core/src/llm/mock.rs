//! Table-driven backend for reproducible runs.
//!
//! Corpus files are JSON objects mapping a lookup key to response text. Keys
//! may be a full request digest, a prompt-key digest, or a literal
//! `block:category:persona` label in which any field can be `*`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmBackend, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    /// Echo the subject block back unchanged.
    #[default]
    Identity,
    Error,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    corpus: BTreeMap<String, String>,
    strict: bool,
    on_miss: MissPolicy,
}

impl MockBackend {
    pub fn new(corpus: BTreeMap<String, String>) -> Self {
        Self {
            corpus,
            strict: false,
            on_miss: MissPolicy::Identity,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let err = |message: String| LlmError::Corpus {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let corpus = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(corpus))
    }

    /// Only full request digests match.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn on_miss(mut self, policy: MissPolicy) -> Self {
        self.on_miss = policy;
        self
    }

    fn lookup(&self, request: &ChatRequest) -> Option<&String> {
        if let Some(hit) = self.corpus.get(&request.digest()) {
            return Some(hit);
        }
        if self.strict {
            return None;
        }
        let key = &request.key;
        if let Some(hit) = self.corpus.get(&key.digest()) {
            return Some(hit);
        }
        let (b, c, p) = (key.block.as_str(), key.category.as_str(), key.persona.as_str());
        [
            (b, c, p),
            (b, c, "*"),
            (b, "*", p),
            (b, "*", "*"),
            ("*", c, p),
            ("*", c, "*"),
            ("*", "*", "*"),
        ]
        .iter()
        .find_map(|(b, c, p)| self.corpus.get(&format!("{b}:{c}:{p}")))
    }
}

impl LlmBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        match self.lookup(request) {
            Some(text) => Ok(text.clone()),
            None => match self.on_miss {
                MissPolicy::Identity => Ok(request.subject_source.clone()),
                MissPolicy::Error => Err(LlmError::CorpusMiss(request.key.label())),
            },
        }
    }
}
