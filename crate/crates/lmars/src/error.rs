use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps variants onto exit codes: argument/domain/parse problems
/// exit 1, numeric failures exit 2, I/O failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Input values outside the domain a routine accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or invalid arguments (dimension mismatches, bad flags).
    #[error("argument error: {0}")]
    Argument(String),

    /// Non-finite values or a computation that lost numeric meaning.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A column with zero range cannot be min-max scaled.
    #[error("degenerate range in column {column}: all values equal")]
    DegenerateRange { column: usize },

    /// Difference orders above 2 are not supported.
    #[error("unsupported difference order {0:?}: components must be 0, 1, or 2")]
    UnsupportedOrder(Vec<usize>),

    /// An index-set construction produced an empty range.
    #[error("structural error: {0}")]
    Structure(String),

    /// Text input that failed to parse, with a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 1 usage/parse, 2 numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}
