use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("malformed metadata row {row}: {message}")]
    Metadata { row: usize, message: String },

    #[error("no records found under {0}")]
    NoRecords(PathBuf),

    #[error("need at least 2 identities, found {0}")]
    TooFewIdentities(usize),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("zero-norm {which} row {row}")]
    ZeroNorm { which: &'static str, row: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("protocol violation: query identity {identity} {problem}")]
    Protocol { identity: String, problem: String },

    #[error("parameter {0} assigned to more than one group")]
    DuplicateParameter(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("backbone mismatch: checkpoint has {found}, config expects {expected}")]
    BackboneMismatch { expected: String, found: String },

    #[error("config hash mismatch in {dir}: directory has {existing}, current config is {current} (pass --overwrite to replace it)")]
    ConfigHashMismatch { dir: PathBuf, existing: String, current: String },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the caller's configuration or inputs rather
    /// than by something going wrong while running.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MissingPath(_)
                | Error::Metadata { .. }
                | Error::NoRecords(_)
                | Error::TooFewIdentities(_)
                | Error::Config(_)
                | Error::BackboneMismatch { .. }
                | Error::ConfigHashMismatch { .. }
                | Error::Checkpoint(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
