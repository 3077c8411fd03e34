use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("unsupported file version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("dataset generation could not fill every class after {attempts} attempts; histogram {histogram:?}")]
    Unbalanced { attempts: u64, histogram: [usize; 7] },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("no feasible posture found (best constraint violation {violation:.4e})")]
    Infeasible { violation: f64 },

    #[error("rollout diverged at step {step}: joint speed {speed:.3} rad/s exceeds cap")]
    RolloutDiverged { step: usize, speed: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
