use thiserror::Error;

/// Errors surfaced by the fallible (data/config/training) APIs.
///
/// Shape and numeric misuse inside the tensor/tape hot path is treated as a
/// programmer error and panics with a descriptive message instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unsupported container version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupted file: {0}")]
    Corrupt(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
