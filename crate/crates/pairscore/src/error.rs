use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped so callers (in particular the CLI) can distinguish
/// configuration/input problems from numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid edge ({a}, {b}) for p = {p}: need a < b, both < p")]
    InvalidEdge { a: usize, b: usize, p: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("refit support too large: |support| = {support} >= n = {n}")]
    OverparameterizedRefit { support: usize, n: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors arising from bad configuration or input, as opposed
    /// to numerical failures during a computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidEdge { .. }
                | Error::InvalidSpec(_)
                | Error::Dimension(_)
                | Error::EmptyData(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
