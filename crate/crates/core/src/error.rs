use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("regularized Gram matrix is numerically singular (pivot {pivot:e} at row {row})")]
    SingularGram { row: usize, pivot: f64 },

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("gamma * ||C|| = {0} >= 1; dynamic programming diverges")]
    DivergentHorizon(f64),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("region [{lo}, {hi}] contains no grid points")]
    EmptyRegion { lo: f64, hi: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(what()))
    }
}
