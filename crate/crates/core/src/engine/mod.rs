//! Matrices of any shape, tile-binary files, probe suites on disk and
//! comparison reports.

mod compare;
pub mod io;
mod matrix;
pub mod selftest;
pub mod suite;

pub use compare::{compare, compare_with_samples, ulp_distance, ComparisonReport, MismatchSample, DEFAULT_SAMPLES};
pub use io::{decode_matrix, encode_matrix, read_matrix, write_matrix};
pub use matrix::{matmul, Matrix};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::formats::FloatFormat;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{what} is {found}, expected {expected}")]
    FormatMismatch { what: String, expected: FloatFormat, found: FloatFormat },
    #[error("element {index}: {bits:#x} is not a valid {format} pattern")]
    InvalidPattern { index: usize, bits: u32, format: FloatFormat },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("not a tile-binary file (bad magic)")]
    BadMagic,
    #[error("unsupported tile-binary version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown format code {0}")]
    UnknownFormat(u8),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: Box<EngineError> },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl EngineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EngineError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        EngineError::File { path: path.to_path_buf(), source: Box::new(self) }
    }

    /// The underlying error with any file context removed.
    pub fn root(&self) -> &EngineError {
        match self {
            EngineError::File { source, .. } => source.root(),
            other => other,
        }
    }
}
