use thiserror::Error;

/// Errors produced by the expansion engine, the layers and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("kernel not admissible at level {level}: worst probe error {error:.3e} exceeds tolerance {tolerance:.1e}")]
    Inadmissible { level: u32, error: f64, tolerance: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite gradient: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
