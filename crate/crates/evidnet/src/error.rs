use std::path::Path;

/// Failure of a pipeline step, classified by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad input, configuration or file contents.
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Non-finite values during training or inference.
    #[error("{0}")]
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 1,
            AppError::Io { .. } => 2,
            AppError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn invalid(path: &Path, message: impl std::fmt::Display) -> Self {
        AppError::Validation(format!("{}: {message}", path.display()))
    }

    /// Prefixes the message with some context, keeping the kind.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            AppError::Validation(m) => AppError::Validation(format!("{what}: {m}")),
            AppError::Numeric(m) => AppError::Numeric(format!("{what}: {m}")),
            io => io,
        }
    }
}

impl From<evidnet_core::Error> for AppError {
    fn from(e: evidnet_core::Error) -> Self {
        if e.is_numeric() {
            AppError::Numeric(e.to_string())
        } else {
            AppError::Validation(e.to_string())
        }
    }
}

/// CSV failures are I/O errors when the reader or writer failed underneath,
/// validation errors otherwise.
pub(crate) fn csv_error(path: &Path, e: csv::Error) -> AppError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => AppError::io(path, io),
            other => AppError::invalid(path, format!("{other:?}")),
        }
    } else {
        AppError::invalid(path, e)
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
