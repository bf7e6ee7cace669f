use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error at data row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("split `{split}` has {len} steps, needs at least {needed}")]
    SplitTooSmall {
        split: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("channel {0} is constant on the training split")]
    ConstantChannel(usize),

    #[error("cross-relation attention needs at least two channels")]
    SingleChannel,

    #[error("optimizer has no state for parameter `{0}`")]
    MissingState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("rolling window holds {have} entries, need at least 2")]
    WindowTooShort { have: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("all trajectory snapshots are identical")]
    DegenerateTrajectory,

    #[error("generated series exceeded magnitude guard at step {step} (|x| = {value:e})")]
    UnstableSystem { step: usize, value: f64 },

    #[error("test set contains no windows")]
    EmptyTestSet,

    #[error("malformed line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
