use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("linear system of size {size} is singular")]
    Singular { size: usize },

    #[error("{what} is undefined: {reason}")]
    Undefined { what: String, reason: String },

    #[error("history has zero likelihood at step {step}")]
    ZeroLikelihood { step: usize },

    #[error("{what} needs {size} entries, above the cap of {cap}")]
    SizeCap { what: String, size: u128, cap: u128 },

    #[error("weights are identically zero")]
    DegenerateWeights,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("malformed table: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), message: message.into() }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}
