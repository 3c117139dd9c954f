use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum DgcfError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("negative sampling failed: {0}")]
    Sampling(String),

    #[error("non-finite value at {location}")]
    Numeric { location: String },

    #[error("shape mismatch: {0}")]
    Contract(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl DgcfError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DgcfError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn numeric(location: impl Into<String>) -> Self {
        DgcfError::Numeric {
            location: location.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DgcfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            DgcfError::Config { .. } | DgcfError::Contract(_) => 2,
            DgcfError::Numeric { .. } => 4,
            DgcfError::Io { .. }
            | DgcfError::Parse { .. }
            | DgcfError::Sampling(_)
            | DgcfError::Lookup(_)
            | DgcfError::Checkpoint { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, DgcfError>;
