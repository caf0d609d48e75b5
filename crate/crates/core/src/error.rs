use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("no active path connects any input to any output")]
    UnreachableOutput,

    #[error("network has no hidden neuron to divide")]
    NoHiddenNeuron,

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("non-numeric value {value:?} at row {row}, column {col}")]
    NonNumeric { row: usize, col: usize, value: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("class {class} is absent from the training split")]
    MissingClass { class: usize },

    #[error("{path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("feature width mismatch: expected {expected} features, got {got}")]
    FeatureWidth { expected: usize, got: usize },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by the input data rather than by a run.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::NonNumeric { .. }
                | Error::UnknownLabel(_)
                | Error::MalformedRow { .. }
                | Error::MissingClass { .. }
                | Error::Idx { .. }
                | Error::FeatureWidth { .. }
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}
