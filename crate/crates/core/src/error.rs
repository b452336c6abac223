//! Error type shared across the library and mapped to CLI exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension {dim} has extent {size}, which is not a power of two")]
    NonDyadic { dim: usize, size: u64 },
    #[error("dimension {dim} is not divisible at node {node}")]
    NotDivisible { dim: usize, node: String },
    #[error("node {node} has full support in dimension {dim}; it has no parent there")]
    NoParent { dim: usize, node: String },
    #[error("tree is not fully refined: leaf {node} is not atomic")]
    NotRefined { node: String },
    #[error("numerical consistency violated: {0}")]
    NumericalConsistency(String),
    #[error("non-finite {what} at node {node}")]
    NonFinite { node: String, what: String },
    #[error("particle weights collapsed at node {node}")]
    WeightCollapse { node: String },
    #[error("input format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

impl WarpError {
    /// Process exit code for the CLI: 2 input format, 3 numerical consistency,
    /// 4 weight collapse, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            WarpError::Format(_)
            | WarpError::NonDyadic { .. }
            | WarpError::InvalidInput(_)
            | WarpError::Config(_)
            | WarpError::Io(_) => 2,
            WarpError::NumericalConsistency(_) | WarpError::NonFinite { .. } => 3,
            WarpError::WeightCollapse { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, WarpError>;
