use starv2x_autodiff::KernelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },
    #[error("could not place {needed} active vehicles after {attempts} drops")]
    InsufficientVehicles { needed: usize, attempts: usize },
    #[error("zero-length link")]
    DegenerateGeometry,
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("phase increment {0} rad is not a multiple of the quantization step")]
    OffGridIncrement(f64),
    #[error("outage probability {0} must lie in (0, 1)")]
    InvalidProbability(f64),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("Taylor expansion point must be positive (xi0 = {xi0}, mu0 = {mu0})")]
    DegenerateExpansionPoint { xi0: f64, mu0: f64 },
    #[error("reverse-convex outage constraint present and linearization is disabled")]
    NonConvex,
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferUnderflow { have: usize, need: usize },
    #[error("joint action space has {0} elements, limit is 1e6")]
    SpaceTooLarge(u128),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
