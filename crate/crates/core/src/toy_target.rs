//! Cubic-polynomial fitting target for fast end-to-end runs.
//!
//! The rendered `pipeline.toy` assigns coefficients `c0..c3`. Scoring is the
//! mean squared error of the polynomial over a fixed 200-point dataset plus
//! the count of non-zero coefficients. Evaluation reads only the rendered
//! bytes, so it is fully reproducible.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde_json::json;
use thiserror::Error;

use crate::bundled::TOY_SEED_FILE;
use crate::engine::{EvaluationConfig, LlmConfig, PromptsConfig, RunConfig, RunParams, SeedConfig};
use crate::evaluator::METRICS_PREFIX;
use crate::moea::{Direction, Objective, ObjectiveSpec};

pub const DATASET_CSV: &str = include_str!("../assets/toy_dataset.csv");

pub const FIT_ERROR: &str = "fit_error";
pub const NEG_FIT_ERROR: &str = "neg_fit_error";
pub const COMPLEXITY: &str = "complexity_count";

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyMetrics {
    pub fit_error: f64,
    pub complexity_count: u32,
}

impl ToyMetrics {
    /// The protocol line, including the `GE_METRICS: ` prefix.
    pub fn metrics_line(&self) -> String {
        let body = json!({
            "objectives": {
                FIT_ERROR: self.fit_error,
                NEG_FIT_ERROR: -self.fit_error,
                COMPLEXITY: self.complexity_count,
            }
        });
        format!("{METRICS_PREFIX}{body}")
    }
}

pub fn dataset() -> &'static [(f64, f64)] {
    static DATA: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    DATA.get_or_init(|| {
        DATASET_CSV
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (x, y) = l.split_once(',').expect("fixture rows are x,y");
                (x.trim().parse().expect("fixture x"), y.trim().parse().expect("fixture y"))
            })
            .collect()
    })
}

/// Coefficients `[c0, c1, c2, c3]`; unassigned ones are zero.
pub fn parse_pipeline(text: &str) -> Result<[f64; 4], ToyError> {
    let mut coeffs = [0.0; 4];
    let mut seen = [false; 4];
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ToyError::Parse { line: n + 1, message };
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `cK = value`, got `{line}`")))?;
        let idx = match name.trim() {
            "c0" => 0,
            "c1" => 1,
            "c2" => 2,
            "c3" => 3,
            other => return Err(err(format!("unknown coefficient `{other}`"))),
        };
        if seen[idx] {
            return Err(err(format!("c{idx} assigned twice")));
        }
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| err(format!("`{}` is not a number", value.trim())))?;
        if !v.is_finite() {
            return Err(err(format!("c{idx} is not finite")));
        }
        coeffs[idx] = v;
        seen[idx] = true;
    }
    Ok(coeffs)
}

pub fn score(coeffs: &[f64; 4]) -> ToyMetrics {
    let data = dataset();
    let mut sum = 0.0;
    for &(x, y) in data {
        let p = ((coeffs[3] * x + coeffs[2]) * x + coeffs[1]) * x + coeffs[0];
        let r = y - p;
        sum += r * r;
    }
    ToyMetrics {
        fit_error: sum / data.len() as f64,
        complexity_count: coeffs.iter().filter(|c| **c != 0.0).count() as u32,
    }
}

/// Scores the rendered pipeline in `workdir` and returns the metrics line.
pub fn toy_evaluate(workdir: &Path) -> Result<String, ToyError> {
    let path = workdir.join(TOY_SEED_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| ToyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(score(&parse_pipeline(&text)?).metrics_line())
}

/// Entry point shared by the standalone binary and the CLI subcommand.
pub fn main_with_workdir(workdir: &Path) -> i32 {
    match toy_evaluate(workdir) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("toy-eval: {e}");
            1
        }
    }
}

/// `fit_error` and `complexity_count`, both minimized. With
/// `maximize_accuracy` the error is expressed as `neg_fit_error`, maximized.
pub fn objectives(maximize_accuracy: bool) -> ObjectiveSpec {
    let first = if maximize_accuracy {
        Objective::new(NEG_FIT_ERROR, Direction::Maximize)
    } else {
        Objective::new(FIT_ERROR, Direction::Minimize)
    };
    ObjectiveSpec::new(vec![first, Objective::new(COMPLEXITY, Direction::Minimize)]).expect("distinct names")
}

/// A small mock-backend run over the toy seed at `seed_path`, scored by
/// `eval_command` (which must accept `{workdir}`).
pub fn run_config(
    seed_path: PathBuf,
    output_dir: PathBuf,
    mock_corpus: Option<PathBuf>,
    eval_command: Vec<String>,
    maximize_accuracy: bool,
) -> RunConfig {
    RunConfig {
        run: RunParams {
            population_size: 8,
            elite_archive_size: 4,
            max_generations: 5,
            rng_seed: 7,
            output_dir,
            ..RunParams::default()
        },
        seed: SeedConfig {
            path: seed_path,
            comment_leader: "#".into(),
        },
        objectives: objectives(maximize_accuracy),
        evaluation: EvaluationConfig {
            command: eval_command,
            timeout_secs: 30.0,
            max_concurrent: 4,
            cache_path: None,
        },
        llm: LlmConfig {
            mock_corpus,
            ..LlmConfig::default()
        },
        prompts: PromptsConfig::default(),
    }
}
