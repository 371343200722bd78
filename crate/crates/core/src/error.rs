use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::prior::plugin::PluginError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validation,
    BeamHardening,
    Fdk,
    Prior,
    Selection,
    Update,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Validation => "validation",
            Stage::BeamHardening => "beam-hardening correction",
            Stage::Fdk => "fdk",
            Stage::Prior => "prior",
            Stage::Selection => "regularization selection",
            Stage::Update => "image update",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Plugin(#[from] PluginError),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("regularization selection failed: {0}")]
    Selection(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error classes, used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parameter,
    Io,
    Geometry,
    Plugin,
    Numerical,
    Selection,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Geometry(_) | Error::Dimension(_) => ErrorKind::Geometry,
            Error::InvalidParameter(_) => ErrorKind::Parameter,
            Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            Error::Plugin(_) => ErrorKind::Plugin,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Selection(_) => ErrorKind::Selection,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Stage annotation, if the error passed through the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
