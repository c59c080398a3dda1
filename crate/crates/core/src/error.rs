use std::io;

use thiserror::Error;

/// Errors raised by the fusion library and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimensions must be positive, got {channels}x{height}x{width}")]
    ZeroDimension {
        channels: usize,
        height: usize,
        width: usize,
    },

    #[error("length mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },

    #[error("non-finite at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {left} vs {right}")]
    Shape { left: String, right: String },

    #[error("not an MXFT file")]
    NotMxft,

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("unsupported ndim {0}, expected 3")]
    UnsupportedNdim(u32),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("at least {required} branches required, got {got}")]
    TooFewBranches { required: usize, got: usize },

    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("timestep {t} out of range for a {steps}-step schedule")]
    TimestepOutOfRange { t: usize, steps: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
