use thiserror::Error;

use crate::uc::ConstraintTag;

/// Errors raised while building or solving scheduling problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema violations:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Schema(Vec<FieldViolation>),

    #[error("EV departure requirement unreachable at node {node}: {chain}")]
    InfeasibleWindow { node: usize, chain: String },

    #[error("problem infeasible; irreducible constraint families: {tags:?}")]
    Infeasible { tags: Vec<ConstraintTag> },

    #[error("solver time limit reached (gap {gap:.3e})")]
    Timeout { gap: f64 },

    #[error("backend `{backend}` cannot solve this problem: {reason}")]
    Unsupported { backend: String, reason: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("nadir cutting-plane loop did not converge after {iterations} iterations (worst violation {violation:.3e})")]
    CutLoop { iterations: usize, violation: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A single failed check against the configuration schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldViolation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
