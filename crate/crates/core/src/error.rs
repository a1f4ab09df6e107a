use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported architecture family `{0}`")]
    UnsupportedFamily(String),

    #[error("invalid scale factor {0}: must lie in (0, 1]")]
    InvalidScale(String),

    #[error("input {height}x{width} is too small for the downsampling chain of {family}")]
    InputTooSmall { family: String, height: usize, width: usize },

    #[error("shape error at node `{node}`: {message}")]
    Shape { node: String, message: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("stage partition: {0}")]
    Stage(String),

    #[error("unknown stage {0}")]
    UnknownStage(String),

    #[error("pass `{pass}` failed: {message}")]
    Pass { pass: &'static str, message: String },

    #[error("engine: {0}")]
    Engine(String),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("candidate {label}: {source}")]
    Candidate {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("criticality: {0}")]
    Criticality(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape { node: node.into(), message: message.into() }
    }

    pub(crate) fn pass(pass: &'static str, message: impl Into<String>) -> Self {
        Error::Pass { pass, message: message.into() }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format { what, message: message.into() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
