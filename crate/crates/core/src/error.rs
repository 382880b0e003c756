use thiserror::Error;

/// Errors produced by the regression engine and its pipeline.
#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A symmetric factorization met a non-positive pivot.
    #[error("matrix is not positive definite after jitter: non-positive pivot at row {pivot} of {dim}")]
    NotPositiveDefinite { pivot: usize, dim: usize },

    /// The iterative solver hit its iteration cap before reaching tolerance.
    #[error("iterative solver did not converge: {iterations} iterations, final relative residual {residual:.3e} (tolerance {tolerance:.1e})")]
    SolverNotConverged { iterations: usize, residual: f64, tolerance: f64 },

    /// A step would need more memory than the configured budget.
    #[error("memory budget exceeded: {what} needs about {needed_mb} MB, budget is {budget_mb} MB")]
    ResourceLimit { what: String, needed_mb: u64, budget_mb: u64 },

    /// Precomputation of one bin failed.
    #[error("bin {bin}: {source}")]
    Bin {
        bin: usize,
        #[source]
        source: Box<GpError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl GpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GpError::InvalidArgument(msg.into())
    }

    /// True for errors caused by ill-conditioned or non-convergent numerics.
    pub fn is_numerical(&self) -> bool {
        match self {
            GpError::NotPositiveDefinite { .. } | GpError::SolverNotConverged { .. } => true,
            GpError::Bin { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = GpError> = std::result::Result<T, E>;
