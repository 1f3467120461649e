use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty cell at row {row}, column `{column}`")]
    EmptyCell { row: usize, column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown level `{level}` for variable `{variable}`")]
    UnknownLevel { variable: String, level: String },

    #[error("{what} has {size} entries, above the limit of {limit}")]
    TooLarge {
        what: String,
        size: u128,
        limit: u128,
    },

    #[error("graph contains a cycle through `{0}`")]
    Cyclic(String),

    #[error("evidence has zero probability under the model: {0}")]
    ImpossibleEvidence(String),

    #[error("soft evidence did not converge after {iterations} iterations (max deviation {deviation:e})")]
    NonConvergence { iterations: usize, deviation: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
