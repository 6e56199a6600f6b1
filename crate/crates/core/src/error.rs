use thiserror::Error;

/// Errors raised across the inference pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("insufficient order: need {needed} moments, got {got}")]
    InsufficientOrder { needed: usize, got: usize },

    #[error("rectangularity r = {0} out of range for this operation")]
    RectangularityOutOfRange(f64),

    #[error("degenerate denominator: |{what}| = {value:e} below tolerance")]
    DegenerateDenominator { what: &'static str, value: f64 },

    #[error("invalid spectrum model: {0}")]
    InvalidModel(String),

    #[error("no integer multiplicities within 1/N of the weights for N = {n}")]
    MultiplicityRoundingError { n: usize },

    #[error("sample has a non-positive eigenvalue (min {min:e}, max {max:e})")]
    SingularSample { min: f64, max: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("root finding failed for a degree {0} denominator")]
    RootFindingFailure(usize),

    #[error("every start terminated in the det Q <= 0 region")]
    NoFeasibleMinimum,

    #[error("need at least 2 accepted estimates, got {0}")]
    InsufficientAccepted(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
