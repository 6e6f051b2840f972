use thiserror::Error;

/// Errors produced by the solver suite.
#[derive(Debug, Error)]
pub enum WempError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("iterative solver broke down after {iterations} iterations (relative residual {residual:.3e})")]
    SolverBreakdown { iterations: usize, residual: f64 },

    #[error("Neumann data incompatible: |int rhs - int flux| = {0:.3e}")]
    Incompatible(f64),

    #[error("rank filter removed {removed} of {total} columns")]
    RankDeficient { removed: usize, total: usize },

    #[error("non-finite value at iteration {iteration}, slab {slab}")]
    NonFinite { iteration: usize, slab: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WempError>;

impl WempError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::BudgetExceeded(_)
                | Self::NotPositiveDefinite { .. }
                | Self::SolverBreakdown { .. }
                | Self::Incompatible(_)
                | Self::RankDeficient { .. }
                | Self::NonFinite { .. }
        )
    }
}
