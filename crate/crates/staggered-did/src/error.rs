//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, inference, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A linear system could not be solved because elimination hit a pivot
    /// that is zero to working tolerance.
    #[error("singular system: pivot {pivot} has magnitude {magnitude:.3e}")]
    SingularSystem { pivot: usize, magnitude: f64 },

    /// A matrix handed to the Cholesky routine is not positive semidefinite.
    #[error("not PSD: pivot {pivot} is {value:.3e}")]
    NotPositiveSemidefinite { pivot: usize, value: f64 },

    /// Inputs whose shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Invalid argument or construction (counts, tables, configuration).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The adjusted-treatment normalizer is zero: every unit shares one
    /// exposure path and the two-way regression cannot identify an effect.
    #[error("no exposure variation: estimator undefined")]
    NoExposureVariation,

    /// The two-way design matrix is rank deficient beyond exposure
    /// degeneracy.
    #[error("collinear design")]
    CollinearDesign,

    /// A weighted adoption group has a single unit, so its within-group
    /// variance cannot be estimated.
    #[error("degenerate group: variance inestimable (adoption date {date} has one unit)")]
    DegenerateGroup { date: String },

    /// A bootstrap replicate kept drawing resamples with no exposure
    /// variation and ran out of attempts.
    #[error("bootstrap replicate {replicate} degenerate after {attempts} redraw attempts")]
    BootstrapDegenerate { replicate: usize, attempts: usize },

    /// A variance handed to the interval routine is negative.
    #[error("negative variance: {0}")]
    NegativeVariance(f64),

    /// The permutation pretest needs both comparison groups present.
    #[error("pretest inapplicable: {0}")]
    PretestInapplicable(String),

    /// The assignment support is too large to enumerate.
    #[error("assignment support too large: {arrangements} arrangements exceed the {limit} limit")]
    SupportTooLarge { arrangements: u128, limit: u128 },

    /// Malformed CSV input, reported with a 1-based line number.
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    /// Panel rows do not form a complete unit-by-time rectangle.
    #[error("incomplete panel: unit {unit} is missing time {time}")]
    IncompleteRectangle { unit: String, time: i64 },
}

impl Error {
    /// Process exit code for the CLI: 2 for input/validation problems,
    /// 3 for numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch(_)
            | Error::Invalid(_)
            | Error::PretestInapplicable(_)
            | Error::SupportTooLarge { .. }
            | Error::Csv { .. }
            | Error::IncompleteRectangle { .. } => 2,
            Error::SingularSystem { .. }
            | Error::NotPositiveSemidefinite { .. }
            | Error::NoExposureVariation
            | Error::CollinearDesign
            | Error::DegenerateGroup { .. }
            | Error::BootstrapDegenerate { .. }
            | Error::NegativeVariance(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
