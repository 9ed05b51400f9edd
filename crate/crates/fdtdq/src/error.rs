use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Index(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("assembly refused: {nodes} nodes exceeds the limit of {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("diagnostic requested outside its valid step range: {0}")]
    Range(String),
    #[error("eigenvalue iteration did not converge after {iterations} iterations (last estimate {estimate:e}, relative change {change:e})")]
    NoConvergence { iterations: usize, estimate: f64, change: f64 },
    #[error("root not bracketed: {0}")]
    NoRoot(String),
    #[error("simulation diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error("time step {dt:e} s exceeds the stability limit {limit:e} s")]
    Unstable { dt: f64, limit: f64 },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
