use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("time {t} s outside trajectory span [0, {end}] s")]
    TimeOutOfRange { t: f64, end: f64 },
    #[error("no Dubins merge found within the lookahead window")]
    NoMergeFound,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty reward list")]
    EmptyRewards,
    #[error("demonstration index {index} out of range for {count} trajectories")]
    InvalidDemoIndex { index: usize, count: usize },
    #[error("backward called without a recorded forward pass")]
    TapeNotRecorded,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("training needs at least one sample with two or more trajectories")]
    EmptyDataset,
    #[error("format error: {0}")]
    Format(String),
    #[error("unknown behavior script `{0}`")]
    UnknownScript(String),
    #[error("planner failed at tick {tick}: {reason}")]
    PlannerFailure { tick: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
