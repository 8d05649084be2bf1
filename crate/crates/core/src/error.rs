use thiserror::Error;

use crate::particles::ParticleEnsemble;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-integrable singularity: {0}")]
    NonIntegrable(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("blow-up at step {step} (t = {time}): particle {particle} left the finite range")]
    BlowUp {
        particle: usize,
        step: u64,
        time: f64,
        /// Snapshots completed before the abort.
        partial: Vec<ParticleEnsemble>,
    },

    #[error("negative density {value:e} in cell {cell} at step {step}")]
    NegativeDensity { cell: usize, step: usize, value: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds the admissible {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("size cap exceeded: {size} > {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("test function `{0}` has zero norm")]
    ZeroNorm(String),

    #[error("seed collision: both trajectories were generated with seed {0}")]
    SeedCollision(u64),

    #[error("trajectory carries no Brownian increments")]
    MissingIncrements,

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad inputs).
    pub fn is_numerical_abort(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::NegativeDensity { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
