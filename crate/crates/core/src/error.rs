use thiserror::Error;

#[derive(Debug, Error)]
pub enum NisError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric range error: {0}")]
    NumericRange(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for NisError {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(e) => NisError::Io(e),
            other => NisError::Parse(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for NisError {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            NisError::Io(err.into())
        } else {
            NisError::Parse(err.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, NisError>;
