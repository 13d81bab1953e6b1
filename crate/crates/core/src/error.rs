use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("integral does not converge: {0}")]
    NonIntegrable(String),

    #[error("tail error bound {bound:e} exceeds requested tolerance {tol:e}")]
    TailBoundTooLoose { bound: f64, tol: f64 },

    #[error("grid too coarse: {nodes} nodes, need at least {min}")]
    GridTooCoarse { nodes: usize, min: usize },

    #[error("measure curve is empty")]
    EmptyCurve,

    #[error("particle {index} left the guard ball (|x| = {norm:e}) at t = {time}")]
    BlowUp { index: usize, norm: f64, time: f64 },

    #[error("step rejected after {retries} halvings: relative mass drift {drift:e}")]
    StepRejected { retries: usize, drift: f64 },

    #[error("all particles coincide; density estimate is degenerate")]
    DegenerateEnsemble,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
