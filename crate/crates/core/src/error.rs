// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad error category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Model,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("payload holds {found} values, shape requires {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("value {value} at index {index} is not representable as {width}-bit {signedness}")]
    OutOfRange {
        index: usize,
        value: i64,
        width: u32,
        signedness: &'static str,
    },

    #[error("negative value {value} at index {index} in a tensor flagged as ReLU output")]
    NegativeActivation { index: usize, value: i64 },

    #[error("non-finite input at index {index}")]
    NonFinite { index: usize },

    #[error("unsupported bit width {0}, expected 8 or 16")]
    UnsupportedWidth(u32),

    #[error("invalid scale {0}, must be finite and positive")]
    InvalidScale(f64),

    #[error("invalid tensor shape: {0}")]
    Shape(String),

    #[error("{value} has no sign-magnitude encoding at width {width}")]
    NoMagnitude { value: i64, width: u32 },

    #[error("value {value} needs more than {width} bits")]
    ValueTooWide { value: u64, width: u32 },

    #[error("invalid precision profile: {0}")]
    Profile(String),

    #[error("malformed stream: {0}")]
    Malformed(String),

    #[error("layer geometry: {0}")]
    Geometry(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("functional mismatch at {coord:?}: reference {expected}, simulated {actual}")]
    Mismatch {
        coord: Vec<usize>,
        expected: i64,
        actual: i64,
    },

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Geometry(_)
            | Error::Unsupported(_)
            | Error::Mismatch { .. }
            | Error::UnknownFixture(_) => ErrorKind::Model,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
