use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 4,
            Error::Invalid(_) | Error::Config(_) => 2,
            Error::Shape { .. }
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
