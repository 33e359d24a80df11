use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or malformed configuration, topology, grid or data.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// A persisted artifact does not match the configuration it is used with.
    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    /// Training or evaluation produced a non-finite quantity.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, reason: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            reason: reason.to_string(),
        }
    }
}
