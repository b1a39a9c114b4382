use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("state error: {0}")]
    State(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("corruption exhausted for path {0:?}")]
    CorruptionExhausted(Vec<usize>),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("compatibility error: {0}")]
    Compat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 3 for data problems, 4 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Vocab(_)
            | Error::State(_)
            | Error::Lookup(_)
            | Error::Compat(_) => 3,
            Error::Contract(_)
            | Error::Dimension { .. }
            | Error::Sampling(_)
            | Error::CorruptionExhausted(_)
            | Error::Numeric(_) => 4,
        }
    }
}
