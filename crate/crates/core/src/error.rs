use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("weight file parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown activation tag `{0}`")]
    UnknownActivation(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for layer {layer} with {len} neurons")]
    IndexOutOfRange { layer: usize, index: usize, len: usize },

    #[error("expected {expected} decompositions (one per hidden layer), got {got}")]
    DecompositionCount { expected: usize, got: usize },

    /// The matrix handed to an interpolative decomposition had no nonzero
    /// entry, so a relative tolerance is meaningless.
    #[error("degenerate input: matrix is identically zero")]
    ZeroMatrix,

    #[error("numerical rank inconsistency: zero pivot at diagonal position {0}")]
    ZeroPivot(usize),

    #[error("invalid tolerance {0}: must lie in (0, 1)")]
    InvalidTolerance(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("point outside domain: {0}")]
    OutsideDomain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("fit diverged: held-out RMSE {final_rmse} did not improve on initial {initial_rmse}")]
    FitDiverged { initial_rmse: f64, final_rmse: f64 },
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
