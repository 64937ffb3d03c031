use thiserror::Error;

/// Errors raised by the simulation engine and its checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("degenerate mixing matrix: second eigenvalue {lambda2} gives rho <= 0")]
    DegenerateMatrix { lambda2: f64 },
    #[error("index {index} out of range for {len} clients")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty shard")]
    EmptyShard,
    #[error("too few samples: {samples} rows for {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("singular system in direct solve")]
    SingularSystem,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step size must be positive, got {0}")]
    ZeroStepSize(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
