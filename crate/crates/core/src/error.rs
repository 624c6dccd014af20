use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no labeled survival records")]
    NoLabeledRecords,
    #[error("unrecognized bag container")]
    UnrecognizedContainer,
    #[error("corrupt bag: {0}")]
    CorruptBag(String),
    #[error("invalid bag: {0}")]
    InvalidBag(String),
    #[error("need at least {needed} labeled patients for cross-validation, found {found}")]
    TooFewPatients { needed: usize, found: usize },
    #[error("feature rows ({rows}) do not match coordinate count ({coords})")]
    RowCountMismatch { rows: usize, coords: usize },
    #[error("empty patch grid")]
    EmptyGrid,
    #[error("all patches in the bag are masked")]
    AllMasked,
    #[error("region {0} has no valid patches")]
    EmptyRegion(usize),
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("C-Index undefined: no comparable pairs")]
    CIndexUndefined,
    #[error("fold size zero: {folds} folds requested for {available} unlabeled samples")]
    FoldSizeZero { folds: usize, available: usize },
    #[error("non-finite loss at epoch {epoch}, window {window}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        window: usize,
        detail: String,
    },
    #[error("missing truth sidecar")]
    MissingTruth,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
