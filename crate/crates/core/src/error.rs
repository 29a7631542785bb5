use thiserror::Error;

use crate::events::OrderType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: unknown event code {code:?}")]
    UnknownEvent { line: usize, code: String },

    #[error("line {line}: timestamp {ts} precedes previous timestamp {prev}")]
    NonMonotoneTimestamp { line: usize, ts: i64, prev: i64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("flow row (d={d}, e={e}) has no observations")]
    UnusableRow { d: u8, e: OrderType },

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("logistic fit did not converge after {0} Newton steps")]
    FitNotConverged(usize),
    #[error("logistic fit: perfect separation, coefficient diverges to {direction}")]
    PerfectSeparation { direction: &'static str },

    #[error("logistic fit: degenerate predictor ({0})")]
    DegeneratePredictor(String),

    #[error("policy has no entry for visited state {0}")]
    MissingState(String),

    #[error("required file {0} not found; run the producing command first")]
    MissingFile(std::path::PathBuf),
    #[error("unsupported model version {0}")]
    Version(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
