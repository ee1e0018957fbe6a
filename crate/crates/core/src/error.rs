use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("direction is not unit norm (norm = {norm})")]
    NonUnitDirection { norm: f64 },
    #[error("angle out of range: azimuth {azimuth} deg, elevation {elevation} deg")]
    AngleOutOfRange { azimuth: f64, elevation: f64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("audio is silent; SNR is undefined")]
    SilentAudio,
    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    AudioTooShort { samples: usize, window: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("tensor file: {0}")]
    TensorFormat(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidGeometry(_)
            | Error::InvalidScene(_)
            | Error::InvalidParameter { .. }
            | Error::AngleOutOfRange { .. } => ErrorKind::Config,
            Error::NonUnitDirection { .. }
            | Error::ZeroVector
            | Error::Divergence { .. }
            | Error::Internal(_) => ErrorKind::Numeric,
            Error::SilentAudio
            | Error::AudioTooShort { .. }
            | Error::ShapeMismatch(_)
            | Error::Csv { .. }
            | Error::TensorFormat(_)
            | Error::Wav(_)
            | Error::Io(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
