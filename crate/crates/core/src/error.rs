use thiserror::Error;

use crate::solvers::SdpStatus;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside interpolation interval [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no usable data: {0}")]
    NoData(String),

    #[error("insufficient data: need at least {need} samples, have {have}")]
    InsufficientData { need: usize, have: usize },

    #[error("too many samples for exhaustive subset enumeration: {have} > {max}")]
    TooManySamples { have: usize, max: usize },

    #[error("zero inter-antenna range; Jacobian undefined")]
    SingularGeometry,

    #[error("degenerate rank-one recovery: leading eigenvalue {0} is not positive")]
    DegenerateSolution(f64),

    #[error("heading undefined: |(cos, sin)| = {0}")]
    HeadingUndefined(f64),

    #[error("SDP solver stopped with status {status:?} after {iterations} iterations")]
    Sdp { status: SdpStatus, iterations: usize },

    #[error("least-squares solver failed: {0}")]
    LeastSquares(String),

    #[error("all {0} refinement starts failed")]
    AllRestartsFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
