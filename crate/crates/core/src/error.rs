use thiserror::Error;

/// Errors raised by graph handling, simulation, fitting and scoring.
#[derive(Debug, Error)]
pub enum RcaError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("non-finite state at node '{node}', t = {time}")]
    Divergence { node: String, time: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl RcaError {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        RcaError::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            RcaError::Data(_)
                | RcaError::Shape { .. }
                | RcaError::UnknownNode(_)
                | RcaError::InvalidGraph(_)
                | RcaError::Json(_)
                | RcaError::Csv(_)
                | RcaError::Io(_)
        )
    }

    /// True for numerical failures (divergence).
    pub fn is_numeric_error(&self) -> bool {
        matches!(self, RcaError::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, RcaError>;
