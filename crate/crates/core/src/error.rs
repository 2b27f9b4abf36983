use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "channel is rank deficient: smallest singular value {smallest:e} is below \
         1e-10 x largest singular value {largest:e}"
    )]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("invalid power constraint: {0}")]
    InvalidConstraint(String),

    #[error("invalid input covariance: {0}")]
    InvalidCovariance(String),

    #[error("{op} requires {expected}, got a {m}x{n} channel")]
    BranchMismatch {
        op: &'static str,
        expected: &'static str,
        m: usize,
        n: usize,
    },

    #[error("closed-form MISO solution requires a single receive antenna, got m = {0}")]
    NotMiso(usize),

    #[error("operation requires exactly two transmit antennas, got n = {0}")]
    NotTwoTransmit(usize),

    #[error("iteration trace is empty")]
    EmptyTrace,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("failed to parse input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
