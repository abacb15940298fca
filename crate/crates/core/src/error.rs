//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or violated precondition (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data, reported with its location where possible.
    #[error("data error: {0}")]
    Data(String),

    /// Two parameter vectors with incompatible layouts were combined.
    #[error("layout mismatch: {0}")]
    Layout(String),

    /// Dimension mismatch between a model and its input.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Filesystem failure (CLI exit code 3).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV parse failure in an input file.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed TOML configuration file.
    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    /// Malformed JSON artifact (report, manifest).
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for bad configs/inputs, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            _ => 2,
        }
    }
}
