use thiserror::Error;

/// Errors raised by the computational modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid code option: {0}")]
    InvalidOption(String),

    #[error("code index vector count overflows: partial product {partial} before user {user}")]
    VectorCountOverflow { partial: usize, user: usize },

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("region and margin overlap at {0}")]
    RegionMarginOverlap(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("no weight assigned to code index vector {0}")]
    MissingWeight(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("overlapping user subsets {a} and {c}")]
    OverlappingSubsets { a: String, c: String },

    #[error("exhaustive partition search needs {count} assignments, cap is {cap}")]
    ExhaustiveCap { count: String, cap: u64 },

    #[error("codebook of {count} codewords exceeds the cap of {cap}")]
    CodebookCap { count: String, cap: usize },

    #[error("exact enumeration needs {count} terms, cap is {cap}")]
    EnumerationCap { count: String, cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
