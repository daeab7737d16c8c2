//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants carry
//! enough location detail (file, row, column, class index) that a CLI user can
//! find the offending input without a debugger.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix or vector had different dimensions than the operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A configuration or specification value is outside its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A CSV cell failed to parse; 1-based row/column for editor friendliness.
    #[error("bad value in {path} at row {row}, column {column}: {message}")]
    CsvCell {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    /// A CSV file was structurally malformed (ragged rows, empty file, ...).
    #[error("malformed csv {path}: {message}")]
    CsvShape { path: PathBuf, message: String },

    /// A metric that needs at least one positive label got none.
    #[error("undefined metric: {0}")]
    NoPositives(String),

    /// Plot emission needs a zero-rate reference row that is absent.
    #[error("missing zero-noise-rate reference for method '{method}', noise type '{noise_type}'")]
    MissingRateZero { method: String, noise_type: String },

    #[error("json config {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("io error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by user-supplied input (bad config, bad file)
    /// rather than internal failures; the CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::IoAt { .. })
    }
}
