use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid interval: lo {lo} > hi {hi}")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("quaternion is not unit length (norm {0})")]
    NonUnitQuat(f64),

    #[error("shape mismatch: {what} expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("environment {env} is mid-episode (step {step}); black-box steps need fresh resets")]
    MidEpisode { env: usize, step: usize },

    #[error("non-finite loss in {0}")]
    NonFiniteLoss(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed metrics csv: {0}")]
    Metrics(String),

    #[error("plot: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
