use thiserror::Error;

/// Errors raised by the scenesync library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not a rotation: {0}")]
    NotOrthonormal(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("infeasible grammar: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match e.classify() {
            Category::Io => Error::Io(e.into()),
            Category::Data => Error::Schema(e.to_string()),
            Category::Syntax | Category::Eof => Error::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
