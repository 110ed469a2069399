use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numeric and modelling code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("matrix is not symmetric: |m[{row},{col}] - m[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("moment accumulator is singular ({context})")]
    SingularAccumulator { context: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset needs at least {needed} distinct {what} labels, found {found}")]
    TooFewLabels {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("invalid priors: {0}")]
    InvalidPriors(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("enrollment list is empty")]
    EmptyEnrollment,

    #[error("trial set needs at least one target and one nontarget score")]
    DegenerateTrialSet,

    #[error("cosine score of a zero vector")]
    ZeroVector,

    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the linear algebra (as opposed to bad input shapes or labels).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::SingularAccumulator { .. } | Error::NonFinite(_) => true,
            Error::Trial { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
