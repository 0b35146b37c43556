//! Run configuration, stored as TOML.
//!
//! Relative paths are resolved against the directory holding the config file
//! when it is loaded, so a loaded config (and every checkpoint embedding it)
//! is independent of the working directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EngineError;
use crate::evaluator::EvalConfig;
use crate::llm::{MissPolicy, RetryPolicy, SamplingConfig};
use crate::moea::ObjectiveSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub population_size: usize,
    pub elite_archive_size: usize,
    pub max_generations: u32,
    pub prob_eot: f64,
    pub mating_rate: f64,
    pub mutation_rate: f64,
    pub crp_enabled: bool,
    pub eot_enabled: bool,
    pub rng_seed: u64,
    /// Stop early after this many generations without a hall-of-fame change.
    pub stagnation_window: Option<u32>,
    /// Mutation attempts per individual during initialization.
    pub init_attempts: u32,
    pub output_dir: PathBuf,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            population_size: 20,
            elite_archive_size: 10,
            max_generations: 10,
            prob_eot: 0.3,
            mating_rate: 0.5,
            mutation_rate: 1.0,
            crp_enabled: true,
            eot_enabled: true,
            rng_seed: 0,
            stagnation_window: None,
            init_attempts: 3,
            output_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub path: PathBuf,
    #[serde(default = "default_leader")]
    pub comment_leader: String,
}

fn default_leader() -> String {
    crate::genome::DEFAULT_COMMENT_LEADER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Argument vector; `{workdir}` is replaced by the rendered candidate's directory.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "one")]
    pub max_concurrent: usize,
    /// Defaults to `eval_cache.ndjson` in the output directory.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

fn default_timeout() -> f64 {
    600.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub max_concurrent: usize,
    pub mock_corpus: Option<PathBuf>,
    pub mock_strict: bool,
    pub mock_miss: MissPolicy,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub request_timeout_secs: u64,
    pub retry: RetryPolicy,
    pub sampling: SamplingConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            max_concurrent: 4,
            mock_corpus: None,
            mock_strict: false,
            mock_miss: MissPolicy::Identity,
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            request_timeout_secs: 120,
            retry: RetryPolicy::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsConfig {
    /// Directory laid out like the builtin library; builtin prompts when unset.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunParams,
    pub seed: SeedConfig,
    pub objectives: ObjectiveSpec,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub prompts: PromptsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            EngineError::Config(m) => EngineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|source| EngineError::Io {
            path: base.to_path_buf(),
            source,
        })?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.output_dir);
        fix(&mut self.seed.path);
        if let Some(p) = self.evaluation.cache_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.llm.mock_corpus.as_mut() {
            fix(p);
        }
        if let Some(p) = self.prompts.dir.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let r = &self.run;
        let bad = |m: String| Err(EngineError::Config(m));
        if r.population_size == 0 {
            return bad("run.population_size must be positive".into());
        }
        if r.elite_archive_size == 0 || r.elite_archive_size > r.population_size {
            return bad(format!(
                "run.elite_archive_size must be in 1..={}, got {}",
                r.population_size, r.elite_archive_size
            ));
        }
        if r.max_generations == 0 {
            return bad("run.max_generations must be positive".into());
        }
        for (name, v) in [
            ("prob_eot", r.prob_eot),
            ("mating_rate", r.mating_rate),
            ("mutation_rate", r.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("run.{name} must be within [0, 1], got {v}"));
            }
        }
        if r.init_attempts == 0 {
            return bad("run.init_attempts must be positive".into());
        }
        if self.llm.max_concurrent == 0 {
            return bad("llm.max_concurrent must be positive".into());
        }
        self.llm
            .sampling
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        self.eval_config()
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn eval_config(&self) -> EvalConfig {
        // Poisoned values are caught by validate.
        let timeout = Duration::try_from_secs_f64(self.evaluation.timeout_secs).unwrap_or(Duration::ZERO);
        EvalConfig {
            command: self.evaluation.command.clone(),
            timeout,
            objective_spec: self.objectives.clone(),
            max_concurrent: self.evaluation.max_concurrent,
            cache_path: Some(
                self.evaluation
                    .cache_path
                    .clone()
                    .unwrap_or_else(|| self.run.output_dir.join("eval_cache.ndjson")),
            ),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
