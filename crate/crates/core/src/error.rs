use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Factorization of `K + σ²I` broke down at the given pivot.
    #[error("ill-conditioned training data: pivot {index} is {value:e}")]
    IllConditioned { index: usize, value: f64 },

    #[error("point lies outside the bound domain")]
    OutsideDomain,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("state diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("sampling-time condition unreachable: {0}")]
    ConditionUnreachable(String),

    #[error("episode cap of {cap} exceeded (last certified bound {last_bound:e})")]
    EpisodeCapExceeded { cap: usize, last_bound: f64 },

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
