use gevo_core::engine::EngineError;
use gevo_core::evaluator::EvalError;
use gevo_core::llm::LlmError;
use gevo_core::operators::OperatorError;
use thiserror::Error;

/// Failure with its process exit code: 2 user or config, 3 environment or
/// backend, 4 internal.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Environment(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Environment(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn io(what: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Environment(format!("{what}: {e}"))
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::Config(_)
            | EngineError::Genome(_)
            | EngineError::Template(_)
            | EngineError::Checkpoint { .. }
            | EngineError::Version { .. } => CliError::Usage(msg),
            EngineError::Eval(EvalError::Config(_)) => CliError::Usage(msg),
            EngineError::Eval(_) | EngineError::Io { .. } => CliError::Environment(msg),
            EngineError::Llm(LlmError::Config(_) | LlmError::Corpus { .. }) => CliError::Usage(msg),
            EngineError::Llm(_) => CliError::Environment(msg),
            EngineError::Operator(OperatorError::MutationFailed(_) | OperatorError::MatingFailed(_)) => {
                CliError::Environment(msg)
            }
            EngineError::Operator(OperatorError::Genome(_) | OperatorError::Template(_)) => CliError::Usage(msg),
            EngineError::Operator(_) | EngineError::Moea(_) => CliError::Internal(msg),
        }
    }
}
