use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter, prior, or simulator setting is outside its valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned correlation matrix: {0}")]
    IllConditioned(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("{path}: row {row}: {message}")]
    CsvRow { path: PathBuf, row: usize, message: String },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("external simulator: {0}")]
    Protocol(#[from] ProtocolError),

    #[error("simulation {index} failed: {source}")]
    Simulation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures of the line-oriented external simulator protocol. Each failure
/// mode is reported distinctly.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("failed to spawn worker `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("worker did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("worker exited with status {0}")]
    NonZeroExit(i32),
    #[error("worker closed its output before END_CSV")]
    UnexpectedEof,
    #[error("worker reported: {0}")]
    Worker(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("worker returned {got} rows, expected {expected}")]
    RowCount { expected: usize, got: usize },
    #[error("worker i/o: {0}")]
    Io(#[from] std::io::Error),
}
