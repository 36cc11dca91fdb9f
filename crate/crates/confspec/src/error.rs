//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("lattice mismatch between operands")]
    LatticeMismatch,

    #[error("dual-vector enumeration exceeded cap of {cap} vectors")]
    EnumerationOverflow { cap: usize },

    #[error("dimension {n} unsupported for this operation (max {max})")]
    UnsupportedDimension { n: usize, max: usize },

    #[error("coefficients violate Hermitian symmetry by {violation:.3e}")]
    NotHermitian { violation: f64 },

    #[error("direction is not admissible: mean={mean:.3e}, mass residual={residual_mass:.3e}, gradient residual={residual_grad:.3e}")]
    NotAdmissible {
        mean: f64,
        residual_mass: f64,
        residual_grad: f64,
    },

    #[error("function is not inside the eigenspace (projection residual {residual:.3e})")]
    NotInEigenspace { residual: f64 },

    #[error("spectral gap assumption fails at level {level}")]
    GapViolation { level: usize },

    #[error("level cutoff {cutoff} does not cover coupled shell with q={q}")]
    LevelCutoffExceeded { cutoff: usize, q: f64 },

    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("exact arithmetic unavailable: {0}")]
    ExactUnavailable(String),

    #[error("identity mismatch in `{name}`: max coefficient gap {gap:.3e}")]
    IdentityMismatch { name: String, gap: f64 },

    #[error("hypothesis of the unique-shortest-vector case fails: {0}")]
    Inapplicable(String),

    #[error("discretization failure: {0}")]
    DiscretizationFailure(String),

    #[error("eigenvalue solver failed: {0}")]
    SolverFailure(String),

    #[error("branch tracking ambiguous at t={t}: overlap margin {margin:.3} below 0.05")]
    TrackingAmbiguous { t: f64, margin: f64 },

    #[error("derivative fit rejected: {0}")]
    FitQuality(String),

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 = verification failure (the
    /// mathematics disagrees), 2 = usage or input error, 3 = numerical
    /// infrastructure failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidLattice(_)
            | Error::LatticeMismatch
            | Error::UnsupportedDimension { .. }
            | Error::NotHermitian { .. }
            | Error::NotAdmissible { .. }
            | Error::NotInEigenspace { .. }
            | Error::GapViolation { .. }
            | Error::EmptyCandidates
            | Error::Inapplicable(_)
            | Error::Usage(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::IdentityMismatch { .. }
            | Error::InternalConsistency(_)
            | Error::NumericalInconsistency(_) => 1,
            Error::EnumerationOverflow { .. }
            | Error::LevelCutoffExceeded { .. }
            | Error::ExactUnavailable(_)
            | Error::DiscretizationFailure(_)
            | Error::SolverFailure(_)
            | Error::TrackingAmbiguous { .. }
            | Error::FitQuality(_) => 3,
        }
    }
}
