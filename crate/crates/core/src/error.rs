use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: lo ({lo}) must be strictly less than hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid signal spec: {0}")]
    InvalidSignal(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate matrix: spectral radius is zero")]
    DegenerateMatrix,

    #[error("singular system: normal equations are not positive definite (use ridge lambda > 0)")]
    Singular,

    #[error("numeric overflow: non-finite reservoir state at step {step}")]
    NumericOverflow { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate weights: every entry is below the zero floor")]
    DegenerateWeights,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
