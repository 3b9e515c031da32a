use thiserror::Error;

use crate::lasso::LassoFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} is numerically zero and cannot be normalized")]
    ZeroColumn(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank {0} is never reached by the column family")]
    RankUnreachable(usize),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("step k={k}: no alternative has a positive residual dimension")]
    DegenerateStep { k: usize },

    #[error("step k={k}, t={t}: response lies numerically inside the tested space")]
    DegenerateResidual { k: usize, t: usize },

    #[error("columns 2..p are not orthonormal")]
    NotOrthonormal,

    #[error("the orthonormal unknown-variance bound requires p < n (p={p}, n={n})")]
    RequiresPltN { p: usize, n: usize },

    #[error("lasso did not converge after {} iterations", .0.n_iters)]
    NotConverged(Box<LassoFit>),

    #[error("bootstrap selection frequency is not monotone in the penalty")]
    NonMonotoneFrequency,

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user input or configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidInput(_) | Error::Io(_) | Error::Csv(_) | Error::Dimension(_)
        )
    }
}
