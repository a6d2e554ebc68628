use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("invalid value for `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    /// The single-track dynamics divide by the longitudinal speed and are not
    /// valid close to standstill.
    #[error("longitudinal speed {v_x:.3} m/s is below the dynamic-model floor of {floor} m/s")]
    LowSpeedDomain { v_x: f64, floor: f64 },

    #[error("query (t = {t:.3} s, v = {v:.3} m/s) lies outside the y_max table")]
    OutOfTable { t: f64, v: f64 },

    #[error("objective is not finite at the initial point")]
    NonFiniteObjective,

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("csv output to {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
