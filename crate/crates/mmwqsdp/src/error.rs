use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// usage errors exit 2, contract violations exit 3, resource and
/// learner failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input, bad flag combination, dimension mismatch.
    #[error("usage error: {0}")]
    Usage(String),

    /// A validated type invariant or operation precondition was broken.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative numeric routine failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A sampling budget or simulator cap was exhausted.
    #[error("resource exhausted: {0}")]
    Resource(String),

    /// The state learner ran out of rounds; carries diagnostics.
    #[error("learner failure: {0}")]
    Learner(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Parse(_) => 2,
            Error::Contract(_) => 3,
            Error::Numeric(_) | Error::Resource(_) | Error::Learner(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
