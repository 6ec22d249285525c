use crate::solvers::SolveReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("{stage} infeasible (residual {:.3e})", report.residual)]
    Infeasible {
        stage: &'static str,
        report: Box<SolveReport>,
    },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
