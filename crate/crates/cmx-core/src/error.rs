use thiserror::Error;

/// Errors shared by every module. The CLI maps each variant to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::CapExceeded(_) => "cap_exceeded",
            Error::Invariant(_) => "invariant",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Input(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Input(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
