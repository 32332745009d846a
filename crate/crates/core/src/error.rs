use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sequence too short: need at least {required} events, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("oracle refuses sequences longer than {cap} (got {len})")]
    OracleCap { len: usize, cap: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("entropy label {s} is outside the model domain")]
    OutOfDomain { s: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model document: {field}: {message}")]
    Document { field: String, message: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("user {user_id}: {source}")]
    User {
        user_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
