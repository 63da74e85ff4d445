use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ordering violation: w > v at {count} cells, worst at cell {worst_cell} (w-v = {worst_gap:.3e})")]
    OrderingViolation {
        count: usize,
        worst_cell: usize,
        worst_gap: f64,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("solver failed: {0}")]
    SolveFailed(String),
    #[error("monotone iteration defect {defect:.3e} below abort threshold")]
    MonotonicityViolation { defect: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
