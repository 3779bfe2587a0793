use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward called before forward (no node {0} on the tape)")]
    BackwardBeforeForward(usize),

    #[error("input resolution {got_h}x{got_w} does not match model input {want_h}x{want_w}; resize slices to {want_h}x{want_w} first")]
    InputResolution {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("invalid NIfTI header: {0}")]
    InvalidHeader(String),

    #[error("truncated {what}: needed {needed} bytes, found {found}")]
    Truncated {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("malformed {what}: {msg}")]
    Malformed { what: &'static str, msg: String },

    #[error("config mismatch on field `{field}`: checkpoint has {found}, expected {expected}")]
    ConfigMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("image/mask dimension mismatch: {image} has {image_dims:?}, {mask} has {mask_dims:?}")]
    VolumeMismatch {
        image: PathBuf,
        mask: PathBuf,
        image_dims: (usize, usize, usize),
        mask_dims: (usize, usize, usize),
    },

    #[error("mask contains non-binary value {value} at index {index}")]
    NonBinary { value: f64, index: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            op,
            axis,
            expected,
            got,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
