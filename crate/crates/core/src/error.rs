use thiserror::Error;

/// Errors raised anywhere in the screening pipeline.
#[derive(Debug, Error)]
pub enum DvsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("natural parameter {theta} exceeds the Poisson overflow guard ({limit})")]
    Overflow { theta: f64, limit: f64 },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("aggregation failed at machine {machine_id}: {reason}")]
    Aggregation { machine_id: usize, reason: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid data at row {row}: {reason}")]
    DataValidation { row: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DvsError>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DvsError::Shape {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
