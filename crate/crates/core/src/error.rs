use thiserror::Error;

/// Errors raised by the tomography library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index overflow: index {index} exceeds cap {cap}")]
    IndexOverflow { index: usize, cap: usize },

    #[error("evaluation outside stable window: |x| = {x} exceeds {window} for index {index}")]
    OutsideWindow { index: usize, x: f64, window: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("truncation: {0}")]
    Truncation(String),

    #[error("contract violation: matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no positive mass after clipping the spectrum")]
    NoPositiveMass,

    #[error("divergent inverse: efficiency {0} must exceed 1/2")]
    DivergentInverse(f64),

    #[error("unphysical state: density {value:e} at x = {x}, phi = {phi}")]
    Unphysical { value: f64, x: f64, phi: f64 },

    #[error("efficiency-corrected pattern functions out of scope; use SML with noise model (eta = {0})")]
    NoisyPatternEstimate(f64),

    #[error("quadrature did not converge: achieved relative change {0:e}")]
    Quadrature(f64),

    #[error("{floored} of {n} log-likelihood terms hit the density floor")]
    DensityFloor { floored: usize, n: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
