use crate::airtime::LayoutError;
use crate::analytics::AnalyticsError;
use crate::ble::MismatchError;
use crate::config::{ConfigError, FileError};
use crate::link::LinkError;
use crate::sweep::EmptyInputError;

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Mismatch(#[from] MismatchError),
    #[error(transparent)]
    Empty(#[from] EmptyInputError),
    #[error("malformed results file: {0}")]
    Schema(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) | Error::Pool(_) => ErrorKind::Io,
            Error::Csv(e) if e.is_io_error() => ErrorKind::Io,
            Error::Json(e) if e.is_io() => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds() {
        let io: Error = std::io::Error::new(std::io::ErrorKind::NotFound, "x").into();
        assert_eq!(io.kind(), ErrorKind::Io);
        let parse: Error = FileError::Invalid("x".into()).into();
        assert_eq!(parse.kind(), ErrorKind::Validation);
        assert_eq!(Error::Schema("x".into()).kind(), ErrorKind::Validation);
    }
}
