use std::io;

use thiserror::Error;

/// Errors produced across the engine. Messages are stable and matched on by tests.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("duplicate coordinate ({0}, {1}, {2})")]
    DuplicateCoordinate(i32, i32, i32),
    #[error("invalid kernel size: {0}")]
    InvalidKernelSize(String),
    #[error("invalid map: point {point} references row {row} of {rows}")]
    InvalidMap { point: usize, row: usize, rows: usize },
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("stale tape: {0}")]
    StaleTape(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("diverged: non-finite loss at iteration {0}")]
    Diverged(u64),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("invalid scene file: {0}")]
    InvalidScene(String),
    #[error("center ({0}, {1}, {2}) not in scene")]
    CenterAbsent(i32, i32, i32),
    #[error("no scenes")]
    NoScenes,
    #[error("{0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
