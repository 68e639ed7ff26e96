use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("target category {0} is absent from the scene")]
    TargetAbsent(u8),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("pose ({x:.3}, {y:.3}) lies outside the map")]
    PoseOutOfBounds { x: f64, y: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("source cell {0} is not traversable")]
    SourceNotTraversable(usize),

    #[error("goal unreachable")]
    GoalUnreachable,

    #[error("degenerate prediction: probabilities sum to zero")]
    DegeneratePrediction,

    #[error("no ground-truth target cells")]
    NoGroundTruth,

    #[error("training diverged at iteration {iter}: loss is {loss}")]
    Diverged { iter: usize, loss: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
