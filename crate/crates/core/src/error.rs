use std::path::PathBuf;

/// Errors raised by the pipeline.
///
/// Variants split into two classes that the command-line front end maps to
/// distinct exit codes: argument problems (`InvalidArgument`) and data or
/// contract violations (everything else).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch on axis `{axis}`: expected {expected}, got {got}")]
    Shape {
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch} (lr = {lr})")]
    NonFinite {
        value: f64,
        epoch: usize,
        batch: usize,
        lr: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
