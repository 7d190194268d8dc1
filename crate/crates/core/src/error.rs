use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("validation failed: {0}")]
    Validation(String),
    /// Mask cell outside {-1, 0, 1}; coordinates are (t, d), d = None for the time axis.
    #[error("invalid mask value {value} at (t={t}, d={d:?})")]
    MaskValue { t: usize, d: Option<usize>, value: i64 },
    #[error("unknown instance {0:?}")]
    MissingInstance(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        /// Last parameters with a finite loss.
        last_finite: Box<crate::tensor::ParamVector>,
    },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error for record {id:?}: {msg}")]
    Schema { id: String, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("duplicate annotation for instance {instance_id:?} in round {round}")]
    Duplicate { instance_id: String, round: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
