use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{what} requires a positive argument, got a={a}, y={y}")]
    Domain { what: &'static str, a: f64, y: f64 },

    #[error("non-finite value in {context} at {at}")]
    NonFinite { context: &'static str, at: f64 },

    #[error("LINEX overflow: psi*(a-y) = {exponent} is beyond the representable range")]
    Overflow { exponent: f64 },

    #[error("E(exp(-psi Y)) diverges for gamma posterior: rate {rate} + psi {psi} <= 0")]
    DivergentMgf { psi: f64, rate: f64 },

    #[error("expected posterior loss is unbounded below: bracket expansion failed after reaching {reached}")]
    Unbounded { reached: f64 },

    #[error("action domains of ensemble members do not intersect")]
    EmptyActionDomain,

    #[error("correlation matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("coordinate {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error("joint model has no data sampler for source `{0}`")]
    MissingSampler(String),

    #[error("Monte Carlo failure (seed {seed}, replicate {replicate}): {source}")]
    MonteCarlo {
        seed: u64,
        replicate: usize,
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    /// True for failures of the numerics (as opposed to malformed input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Overflow { .. }
                | Error::DivergentMgf { .. }
                | Error::Unbounded { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::EmptyActionDomain
                | Error::MonteCarlo { .. }
        )
    }

    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}
