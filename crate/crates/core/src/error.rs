use std::path::PathBuf;

use crate::harness::RunRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {label} out of range for {classes} classes (sample {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("non-finite value produced at layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient entry at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite parameter update at index {index}")]
    NonFiniteUpdate { index: usize },

    #[error("noise rate {0} outside [0, 1]")]
    InvalidRate(f64),

    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),

    #[error("noise injection requires a clean dataset, but {0} samples are already noisy")]
    NotClean(usize),

    #[error("cannot place {classes} cluster centers in {dim} dimensions at separation {separation}")]
    InfeasiblePacking {
        classes: usize,
        dim: usize,
        separation: f64,
    },

    #[error("invalid dataset request: {0}")]
    InvalidDataset(String),

    #[error("gradient length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("g_sgd != g_clean + g_noise at component {index} (residual {residual:e})")]
    Additivity { index: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset parse error at line {line}: {message}")]
    DatasetParse { line: usize, message: String },

    #[error("metrics parse error at row {row}: {message}")]
    MetricsParse { row: usize, message: String },

    #[error("metrics schema mismatch: {0}")]
    Schema(String),

    #[error("records cannot be compared: {0}")]
    Compare(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged {
        epoch: usize,
        /// Rows completed before the failure.
        partial: Box<RunRecord>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
