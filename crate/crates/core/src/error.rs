use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mu must lie in (0, 1/2], got {0}")]
    MuOutOfRange(f64),
    #[error("parameter `{name}` out of range: {detail}")]
    InvalidParameter { name: &'static str, detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },
    #[error("matrix is not stable: spectral radius {0} >= 1")]
    Unstable(f64),
    #[error("gain constraint violated: |Khat e2 - K1 e2| = {0}")]
    GainConstraint(f64),
    #[error("packing degenerate: only {placed} center(s) placed")]
    DegeneratePacking { placed: usize },
    #[error("empty regression sample")]
    EmptySample,
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;
