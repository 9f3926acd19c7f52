use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: need a power of two >= 8")]
    InvalidGrid(usize),

    #[error("grid mismatch: expected n={expected}, found n={found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} outside admissible range [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error(
        "CFL violated at t={t}: dt*max|u|*n/(2pi) = {courant:.4} > 0.5 (max|u| = {max_speed:.4e})"
    )]
    Cfl { t: f64, courant: f64, max_speed: f64 },

    #[error("invalid history: {0}")]
    InvalidHistory(String),

    #[error("invalid loop: {0}")]
    InvalidLoop(String),

    #[error(
        "loop too stretched at this resolution: refinement needs more than {cap} markers (sample {sample})"
    )]
    MarkerCap { cap: usize, sample: u64 },

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
