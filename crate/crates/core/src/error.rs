use std::io;

use thiserror::Error;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("constant row for ticker {ticker}: zero standard deviation")]
    ConstantRow { ticker: String },

    #[error("constant column {column}: zero cross-sectional standard deviation")]
    ConstantColumn { column: usize },

    #[error("panel has {columns} columns, {deficit} short of a whole number of {epoch}-column epochs")]
    Remainder {
        columns: usize,
        epoch: usize,
        deficit: usize,
    },

    #[error("expected a {expected} panel, got {found}")]
    WrongMode {
        expected: &'static str,
        found: &'static str,
    },

    #[error("ticker mismatch: {0}")]
    TickerMismatch(String),

    #[error("matrix is rank deficient (min eigenvalue {min:e} <= 1e-10 * max eigenvalue {max:e})")]
    RankDeficient { min: f64, max: f64 },

    #[error("basis was computed on slice {basis} but the panel is slice {panel}")]
    SliceMismatch { basis: String, panel: String },

    #[error("degenerate support: all {0} samples are identical")]
    DegenerateSupport(usize),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Schema(_) => ErrorKind::Config,
            Error::RankDeficient { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
