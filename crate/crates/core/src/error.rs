use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network size {n}: at least {min} nodes required")]
    InvalidSize { n: usize, min: usize },

    #[error("node id {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("graph is not strongly connected: node {to} is unreachable from node {from}")]
    NotStronglyConnected { from: usize, to: usize },

    #[error("invalid probability {0}: must lie in [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid quantization level: {0}")]
    InvalidLevel(String),

    #[error("lattice overflow: {0}")]
    Overflow(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite (smallest eigenvalue {min_eigenvalue})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("singular linear system")]
    Singular,

    #[error("empty network")]
    EmptyNetwork,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("consensus did not halt within {budget} rounds\n{dump}")]
    NonTermination { budget: u64, dump: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("degenerate normalization: node {0} starts at the optimum")]
    DegenerateNormalization(usize),

    #[error("degenerate certificate: d = 1")]
    DegenerateCertificate,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
