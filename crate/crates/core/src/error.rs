use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by category so that front ends can map them onto
/// stable exit codes (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("degenerate local frame for RBM `{rbm}`: {reason}")]
    DegenerateFrame { rbm: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sequence rejected: {frames} frames after resampling, minimum is {min}")]
    TooShort { frames: usize, min: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format version {found} (supported major version {supported})")]
    Version { found: String, supported: u16 },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    ConfigMismatch,
    Format,
    Io,
    Divergence,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_)
            | Error::Dimension(_)
            | Error::Mesh(_)
            | Error::Degenerate(_)
            | Error::TooShort { .. } => ErrorCategory::Input,
            Error::DegenerateFrame { .. } | Error::Config(_) => ErrorCategory::Config,
            Error::ConfigMismatch(_) => ErrorCategory::ConfigMismatch,
            Error::Parse { .. } | Error::Version { .. } | Error::Json(_) => ErrorCategory::Format,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Diverged { .. } => ErrorCategory::Divergence,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
