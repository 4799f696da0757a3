use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the control stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate reference point: |cos(delta_r)| = {cos_delta:.3e} is too small")]
    DegenerateReference { cos_delta: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("track has {found} distinct points, at least 3 are required")]
    TooFewPoints { found: usize },

    #[error("reference speed {speed:.4} m/s at arc length {arc_length:.3} m is below the minimum {min:.4} m/s")]
    InfeasibleSpeed { speed: f64, arc_length: f64, min: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("QP Hessian is not positive semidefinite (Cholesky with shift failed)")]
    IllConditioned,

    #[error("insufficient data: {needed} samples required, {found} provided")]
    InsufficientData { needed: usize, found: usize },

    #[error("input inversion failed: residual {residual:.3e} exceeds threshold {threshold:.3e}")]
    InversionFailure { residual: f64, threshold: f64 },

    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged {
        epoch: usize,
        /// Best finite model seen before the failure.
        checkpoint: Option<Box<crate::koopman::KoopmanModel>>,
    },

    #[error("reference exhausted: needed index {needed}, trajectory has {len} points")]
    ReferenceExhausted { needed: usize, len: usize },

    #[error("closed-loop run diverged at step {step}: |lateral error| {lateral_error:.3} m exceeds {threshold:.3} m")]
    DivergedRun {
        step: usize,
        lateral_error: f64,
        threshold: f64,
    },

    #[error("log is empty")]
    EmptyLog,

    #[error("model file: {0}")]
    Model(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
