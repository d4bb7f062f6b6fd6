use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),
    /// A factorization or iteration failed on an input that satisfied the preconditions.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A scenario could not produce a usable summary.
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("parse error: {0}")]
    Parse(String),
    /// Malformed or invalid run configuration, anchored to a line when possible.
    #[error("{}", match line { Some(l) => format!("config error at line {l}: {message}"), None => format!("config error: {message}") })]
    Config { line: Option<usize>, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
