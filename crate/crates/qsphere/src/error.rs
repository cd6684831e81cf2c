use num_complex::Complex64;
use thiserror::Error;

use crate::lattice::LatticePoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid base: {0}")]
    InvalidBase(String),

    #[error("truncation failure: {0}")]
    TruncationFailure(String),

    /// An uncancelled denominator factor vanished. `direction` is the ratio with
    /// the vanishing factors removed, i.e. the side from which it blows up.
    #[error("divergent ratio: denominator factor with argument {argument} vanishes")]
    DivergentRatio {
        argument: Complex64,
        direction: Complex64,
    },

    #[error("indeterminate ratio: numerator and denominator both vanish without a shared factor")]
    IndeterminateRatio,

    #[error("series does not converge: {0}")]
    Nonconvergent(String),

    #[error("pole in denominator parameter {0}")]
    PoleInDenominator(Complex64),

    #[error("continuation singular: {0}")]
    ContinuationSingular(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("ill-conditioned system: condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("missing provider: {0}")]
    MissingProvider(String),

    #[error("training residual {residual:.3e} exceeds ceiling {ceiling:.1e}")]
    ResidualTooLarge { residual: f64, ceiling: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{source} at lambda = {lambda}, p0 = {p0}")]
    AtPoint {
        source: Box<Error>,
        lambda: Complex64,
        p0: LatticePoint,
    },
}

impl Error {
    /// Stable name used in reports and CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidBase(_) => "InvalidBase",
            Error::TruncationFailure(_) => "TruncationFailure",
            Error::DivergentRatio { .. } => "DivergentRatio",
            Error::IndeterminateRatio => "IndeterminateRatio",
            Error::Nonconvergent(_) => "Nonconvergent",
            Error::PoleInDenominator(_) => "PoleInDenominator",
            Error::ContinuationSingular(_) => "ContinuationSingular",
            Error::DomainError(_) => "DomainError",
            Error::IllConditioned { .. } => "IllConditioned",
            Error::GridMismatch(_) => "GridMismatch",
            Error::MissingProvider(_) => "MissingProvider",
            Error::ResidualTooLarge { .. } => "ResidualTooLarge",
            Error::Input(_) => "InputError",
            Error::AtPoint { source, .. } => source.name(),
        }
    }

    /// Strips point context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } => source.root(),
            e => e,
        }
    }
}
