use thiserror::Error;

use crate::linalg::LinalgError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("Kraus operators are not trace preserving: ‖Σ L_i* L_i − 1‖ = {deviation:.3e}")]
    NotTracePreserving { deviation: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("operation needs a non-trivial subspace")]
    EmptySubspace,
    #[error("subspace is not an enclosure (defect {defect:.3e})")]
    NotAnEnclosure { defect: f64 },
    #[error("absorption system on the complement is singular")]
    SingularTransientSystem,
    #[error("fixed-point space is numerically ambiguous: eigenvalue at distance {distance:.3e} from 1")]
    NumericalDegeneracy { distance: f64 },
    #[error("restricted channel is not irreducible (fixed space dimension {fixed_dim})")]
    NotIrreducible { fixed_dim: usize },
    #[error("could not separate minimal enclosures after {attempts} random draws")]
    DecompositionFailed { attempts: usize },
    #[error("all branch probabilities vanish (state is corrupted)")]
    DegenerateStep,
    #[error("absorption martingale left [0, 1]: {value}")]
    MartingaleOutOfRange { value: f64 },
    #[error("no Y track named {0:?}")]
    MissingTrack(String),
    #[error("projection axis required for lattice dimension {0}")]
    MissingAxis(usize),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("horizon mismatch: prediction at n = {prediction}, ensemble at n = {ensemble}")]
    HorizonMismatch { prediction: usize, ensemble: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("consistency check failed: {0}")]
    AssertionFailure(String),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_)
            | Error::Io { .. }
            | Error::InvalidState(_)
            | Error::HorizonMismatch { .. }
            | Error::MissingAxis(_)
            | Error::DimensionMismatch { .. } => 1,
            Error::InvalidModel(_) | Error::NotTracePreserving { .. } => 2,
            _ => 3,
        }
    }
}
