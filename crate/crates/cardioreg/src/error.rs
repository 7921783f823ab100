use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask contains no set voxels")]
    EmptyMask,
    #[error("mask contains no unset voxels")]
    FullMask,
    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient encountered{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFiniteGradient { epoch: Option<usize> },
    #[error("fixed-point inversion did not converge: residual {residual_mm:.6} mm after {iters} iterations")]
    NoConvergence { residual_mm: f64, iters: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::NonFiniteGradient { .. } | Error::NoConvergence { .. } => 3,
            _ => 2,
        }
    }
}
