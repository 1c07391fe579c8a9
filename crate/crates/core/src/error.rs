use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid ISO week {year}-W{week:02}")]
    InvalidWeek { year: i32, week: u32 },

    #[error("unknown page title {0:?}")]
    UnknownTitle(String),

    #[error("personalized pagerank did not converge after {iterations} iterations (L1 residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("optimizer diverged at epoch {epoch} (objective {objective}); reduce the step size (currently {step_size:e})")]
    Diverged {
        epoch: usize,
        objective: f64,
        step_size: f64,
    },

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("duplicate incidence row for week {0}")]
    DuplicateWeek(crate::week::IsoWeek),

    #[error("negative or non-finite incidence {value} for week {week}")]
    InvalidIncidence { week: crate::week::IsoWeek, value: f64 },

    #[error("incidence missing for week {0}")]
    MissingIncidence(crate::week::IsoWeek),

    #[error("file name {0:?} carries no YYYYMMDD-HHMMSS timestamp")]
    MissingTimestamp(String),

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of input data (as opposed to
    /// bad arguments or configuration).
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
