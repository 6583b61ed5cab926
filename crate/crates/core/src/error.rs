use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("under-resolved cutoff: radius {radius} is below {min} (4 grid spacings)")]
    UnderResolvedCutoff { radius: f64, min: f64 },

    #[error("derivative order {order} is not resolvable on a lattice with {extent} points per axis")]
    UnresolvedDerivative { order: usize, extent: usize },

    #[error("symbol is not elliptic: {0}")]
    NotElliptic(String),

    #[error("state dimension {dim} exceeds the dense cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("operator is not self-adjoint (relative defect {0:e})")]
    NotSelfAdjoint(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
