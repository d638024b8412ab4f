use std::fmt;

/// Errors produced by the ecpuct library.
#[derive(Debug)]
pub enum Error {
    /// A parameter was outside its documented domain.
    InvalidParameter(String),
    /// Two inputs that must agree in shape or sampling did not.
    ShapeMismatch(String),
    /// A file could not be read, written, or parsed.
    Io(std::io::Error),
    /// A binary or text payload was malformed.
    Format(String),
    /// An iterative solver failed to reach its tolerance.
    Convergence(String),
    /// A rule-based selection had no admissible answer for the given data.
    RuleFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Convergence(msg) => write!(f, "convergence failure: {msg}"),
            Error::RuleFailure(msg) => write!(f, "rule failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
