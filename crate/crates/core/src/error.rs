use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("basis index {index} out of range 1..={size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("point {point:?} lies outside the unit cube")]
    OutsideDomain { point: Vec<f64> },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular design: condition number {cond:.3e} exceeds {limit:.1e}")]
    SingularDesign { cond: f64, limit: f64 },

    #[error("sample size {n} must exceed sieve dimension {k}")]
    TooFewObservations { n: usize, k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: successive refinements differ by {diff:.3e}")]
    QuadratureNonConvergence { diff: f64 },

    #[error("weight mode {mode} requires {missing}")]
    MissingWeightInput { mode: &'static str, missing: &'static str },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("need at least {need} retained draws, got {got}")]
    InsufficientDraws { got: usize, need: usize },

    #[error("replication {index} (seed {seed}) failed: {source}")]
    Replication {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}
