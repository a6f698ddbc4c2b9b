use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config: {0}")]
    Validation(String),

    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("size guard exceeded in {op}: {entries} entries > cap {cap}")]
    SizeCap {
        op: &'static str,
        entries: usize,
        cap: usize,
    },

    /// A zero (or denormal) pivot appeared during tridiagonal elimination.
    #[error("singular tridiagonal system at row {row} (pivot {pivot:e}){context}")]
    SingularTridiagonal {
        row: usize,
        pivot: f64,
        context: String,
    },

    #[error("singular dense system in {0}")]
    SingularDense(&'static str),

    #[error("Schur iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    SchurNoConvergence { sweeps: usize, residual: f64 },

    #[error("non-positive density {0:e}")]
    NonPositiveDensity(f64),

    #[error("non-positive temperature {0:e}")]
    NonPositiveTemperature(f64),

    #[error("non-positive Maxwellian factor at index {0}")]
    NonPositiveWeight(usize),

    #[error("canonical form violation: {0}")]
    Form(String),

    #[error("spatial point {j}, substep {stage}: {source}")]
    Stage {
        j: usize,
        stage: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient peaks for damping fit: found {found}, need {need}")]
    InsufficientPeaks { found: usize, need: usize },

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, j: usize, stage: u8) -> Self {
        Error::Stage {
            j,
            stage,
            source: Box::new(self),
        }
    }
}
