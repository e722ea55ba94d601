use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("size mismatch in {context}: expected {expected}, found {found}")]
    SizeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("coefficients are not elliptic at {location} (smallest eigenvalue {value})")]
    NonElliptic { location: String, value: f64 },

    #[error("non-finite coefficient entry at {0}")]
    NonFinite(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("linear solve did not reach tolerance at step {step}: relative residual {residual:e}")]
    SolverDiverged { step: usize, residual: f64 },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("trajectory has {found} states, at least {required} are needed")]
    TooFewSteps { required: usize, found: usize },

    #[error("time {t} lies outside the open window ({t0}, {t1})")]
    OutsideWindow { t: f64, t0: f64, t1: f64 },

    #[error("known source factor vanishes at T0 at {location}")]
    DegenerateKnownPart { location: String },

    #[error("observation region contains no cells")]
    EmptyObservationRegion,

    #[error("observation region is not compactly contained in the disk: {0}")]
    RegionTouchesBoundary(String),

    #[error("observation time {t} is not a node of the time grid")]
    OffGridObservationTime { t: f64 },

    #[error("regularized normal equations are singular (epsilon = {epsilon:e})")]
    SingularNormalEquations { epsilon: f64 },

    #[error("source basis of dimension {requested} exceeds the cap {cap}")]
    BasisCapExceeded { requested: usize, cap: usize },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::SizeMismatch {
            context,
            expected,
            found,
        })
    }
}
