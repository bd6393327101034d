use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("tag index {tag} out of range for {count} tags")]
    TagOutOfRange { tag: usize, count: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("instance too large for exhaustive enumeration ({paths} paths)")]
    TooLarge { paths: u128 },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid rule pattern `{pattern}`: {reason}")]
    InvalidPattern { pattern: String, reason: String },
    #[error("sentence {0} has no PICO probabilities")]
    MissingProbabilities(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
