use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("value {value} at index {index} is outside {expected}")]
    OutOfRange {
        index: usize,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "enumeration over {n} pixels exceeds the limit of {max}; use the Poisson-binomial route"
    )]
    EnumerationLimit { n: usize, max: usize },

    #[error("exact computation over {n} pixels exceeds the configured cap of {cap}")]
    SizeCap { n: usize, cap: usize },

    #[error("predicted foreground carries zero probability mass (s = 0); bounds are undefined")]
    ZeroForeground,

    #[error("all Bernoulli parameters are zero; the truncated distribution is undefined")]
    DegenerateTruncation,

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("target {target} is not bracketed by [{low}, {high}]")]
    NotBracketed { target: f64, low: f64, high: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
