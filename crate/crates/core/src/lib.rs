//! Multi-objective, LLM-guided evolution of marked code blocks.
//!
//! A seed source tree is split into named blocks ([`genome`]). Candidates are
//! produced by language-model mutation and mating ([`operators`]), scored by
//! an external command ([`evaluator`]) and selected on their Pareto fronts
//! ([`moea`]). [`engine`] ties these into a resumable run loop.

pub mod bundled;
pub mod engine;
pub mod evaluator;
pub mod genome;
pub mod llm;
pub mod moea;
pub mod operators;
pub mod toy_target;

pub use evaluator::{EvalConfig, EvalError, EvalRecord, Evaluator, InvalidReason};
pub use genome::{CodeBlock, Genome, GenomeError, GenomeId, Provenance, SeedTemplate};
pub use llm::{LlmBackend, LlmClient, LlmError, PromptKey, SamplingConfig};
pub use moea::{Direction, Fitness, Objective, ObjectiveSpec, ParetoArchive, ScoredGenome};
pub use operators::{OperatorContext, OperatorError, OperatorKind, Variation};
