use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{0} is not available for this problem instance")]
    Unsupported(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("normalized step requested along a zero direction")]
    ZeroDirection,

    #[error("movement budget already exceeded: {allowed} allowed, {accumulated} accumulated")]
    ShrinkInvariant { allowed: f64, accumulated: f64 },

    #[error(
        "parameter fixed point did not converge after {rounds} rounds \
         (eta_h = {eta_h:e}, t_thres = {t_thres}, log constant = {log_const})"
    )]
    NoFixedPoint { rounds: usize, eta_h: f64, t_thres: usize, log_const: f64 },

    #[error(
        "eigenvalue iteration stalled after {iterations} iterations: \
         best estimate {eigenvalue} with residual {residual:e} (tolerance {tolerance:e})"
    )]
    EigenNotConverged { eigenvalue: f64, residual: f64, tolerance: f64, iterations: usize },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
