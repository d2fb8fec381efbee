use thiserror::Error;

/// Errors produced by the registration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("unsupported dimension {0}, only 1, 2 and 3 are handled")]
    UnsupportedDimension(usize),

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error(
        "point set contains redundant points (pairwise distance zero); \
         the registration model assumes no redundant elements"
    )]
    RedundantPoints,

    #[error("not a proper rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("coefficient vectors were produced by different basis specs")]
    SpecMismatch,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("too few correspondences: {got}, need at least {need}")]
    TooFewCorrespondences { got: usize, need: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Parse(#[from] crate::io::ParseError),
}

pub type Result<T> = std::result::Result<T, Error>;
