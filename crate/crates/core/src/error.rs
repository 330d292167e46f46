use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("mask not binary: value {value} at flat index {index}")]
    MaskNotBinary { value: u8, index: usize },

    #[error("undefined surface distance: {0} mask is empty")]
    UndefinedSurfaceDistance(&'static str),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, patient {patient}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        patient: usize,
        step: usize,
    },

    #[error("model state not initialized: {0}")]
    Uninitialized(&'static str),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::BadMagic { .. } => "bad_magic",
            Error::Header(_) => "header",
            Error::UnknownDtype(_) => "unknown_dtype",
            Error::PayloadSize { .. } => "payload_size",
            Error::MaskNotBinary { .. } => "mask_not_binary",
            Error::UndefinedSurfaceDistance(_) => "undefined_surface_distance",
            Error::Schedule(_) => "schedule",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Uninitialized(_) => "uninitialized",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
