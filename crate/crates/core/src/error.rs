use thiserror::Error;

use crate::geometry::Pose6;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("forward kinematics did not converge after {iterations} iterations (best residual {residual:.3e} m)")]
    FkNotConverged {
        best: Pose6,
        residual: f64,
        iterations: usize,
    },

    #[error("empty waypoint path")]
    EmptyPath,

    #[error("unsupported letter {0:?}")]
    UnsupportedLetter(char),

    #[error("signal too short: {have:.3} wavelengths, need at least {need}")]
    SignalTooShort { have: f64, need: f64 },

    #[error("reference amplitude must be positive, got {0}")]
    ZeroReference(f64),

    #[error("not enough samples: {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate:e})")]
    TrainingDiverged { epoch: usize, learning_rate: f64 },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
