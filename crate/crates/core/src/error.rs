use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Every variant maps onto one of four [`ErrorKind`]s, which the CLI turns
/// into process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("infeasible window: context {context} + horizon {horizon} exceeds series length {len}")]
    InfeasibleWindow {
        context: usize,
        horizon: usize,
        len: usize,
    },
    #[error("base forecast cache is missing {} window(s), first: {:?}", .0.len(), .0.first())]
    Coverage(Vec<(String, usize)>),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Contract,
    Divergence,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Structure(_)
            | Error::Contract(_)
            | Error::InfeasibleWindow { .. }
            | Error::Coverage(_) => ErrorKind::Contract,
            Error::Divergence(_) => ErrorKind::Divergence,
            Error::Io(_) | Error::Json(_) => ErrorKind::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
