use thiserror::Error;

use crate::pde::PdeKind;

pub type Result<T> = std::result::Result<T, AnchorError>;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("field contains non-finite values")]
    NonFiniteField,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{0:?} has no spectral linear/nonlinear split")]
    NoSpectralSplit(PdeKind),

    #[error("ETDRK4 coefficient overflow (L*dt = {0})")]
    CoefficientOverflow(f64),

    #[error("high-fidelity solver diverged at step {step}")]
    SolverDiverged { step: usize },

    #[error("surrogate produced a non-finite state")]
    SurrogateDiverged,

    #[error("field has no active cells")]
    EmptyDomain,

    #[error("snapshot rank {rank} is below the requested basis size {requested}")]
    InsufficientRank { rank: usize, requested: usize },

    #[error("states are not consecutive: {0}")]
    TrajectoryGap(String),

    #[error("error estimator became non-finite at step {step}")]
    EstimatorCorrupt { step: usize },

    #[error("reference field is zero but prediction is not")]
    DegenerateReference,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<AnchorError> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AnchorError {
    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        AnchorError::GridMismatch(msg.into())
    }

    pub fn in_sample(self, index: usize) -> Self {
        match self {
            AnchorError::Sample { .. } => self,
            other => AnchorError::Sample { index, source: Box::new(other) },
        }
    }
}
