//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("kernel ({k},{kp}) is not finite at r = {r} (agents {i}, {ip})")]
    NonFiniteKernel {
        k: usize,
        kp: usize,
        i: usize,
        ip: usize,
        r: f64,
    },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("observed distance {r} exceeds the hypothesis interval radius {rmax}")]
    DistanceOverflow { r: f64, rmax: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pairwise measure for ({k},{kp}) is empty")]
    EmptyMeasure { k: usize, kp: usize },

    #[error("velocities required but absent")]
    MissingVelocities,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
