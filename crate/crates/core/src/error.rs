use thiserror::Error;

use crate::ledger::EnergyLedger;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented bound; the message names it.
    #[error("configuration error: {0}")]
    Config(String),

    /// Positioned diagnostic from the config or field-file parsers.
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("boundary-condition violation: |u| = {max_abs:e} on a y-endpoint row")]
    BoundaryViolation { max_abs: f64 },

    #[error("representation error: Hermitian symmetry broken (residue {residue:e})")]
    Representation { residue: f64 },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("numerical blow-up at t = {time}")]
    BlowUp { time: f64, ledger: Box<EnergyLedger> },

    #[error("threshold violation: ||u0|| = {norm} exceeds {threshold}")]
    ThresholdViolation { norm: f64, threshold: f64 },

    #[error("box contamination: buffer peak ratio {ratio:e} at t = {time}")]
    Contamination { time: f64, ratio: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BlowUp { .. } => 3,
            Error::Config(_) | Error::Parse { .. } | Error::Parameter(_) | Error::ThresholdViolation { .. } => 2,
            _ => 1,
        }
    }
}
