//! Error taxonomy shared across the toolkit.
//!
//! Variants group by who can fix the problem: bad input files or configs,
//! runtime failures inside a model component, and data that is structurally
//! valid but unusable (empty splits, all-padded batches). The process exit
//! code is derived from the variant.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input: missing columns, unknown labels, invalid configs,
    /// checkpoint version or shape mismatches.
    #[error("schema error: {0}")]
    Schema(String),

    /// A model component failed at runtime: NaN loss, embedding provider
    /// contract violations, generation failures.
    #[error("model runtime error: {0}")]
    Runtime(String),

    /// Input that is well-formed but carries no usable signal.
    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Error::Schema(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Error::Runtime(message.into())
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Error::Degenerate(message.into())
    }

    /// Process exit code: 2 input/schema, 3 runtime/model, 4 degenerate data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Schema(_) => 2,
            Error::Runtime(_) => 3,
            Error::Degenerate(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
