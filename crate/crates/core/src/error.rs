//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by tensor primitives and the gradient tape.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("softmax slice has no finite entry")]
    DegenerateDistribution,
    #[error("{op} expects a scalar tensor, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("tensor is not recorded on this tape (id {0})")]
    NotOnTape(u64),
    #[error("row index {index} out of range for table with {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("invalid range {start}..{end} for axis {axis} of extent {extent}")]
    BadRange {
        axis: usize,
        start: usize,
        end: usize,
        extent: usize,
    },
}

/// Contract violations in the tree encoders and the outer recursion.
#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("sequence too short: need at least {need} nodes, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("chunk size must be at least 2, got {0}")]
    BadChunkSize(usize),
    #[error("expected fully reduced hypotheses of length 1, got length {0}")]
    NotReduced(usize),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("beam width mismatch across chunk outputs: {0:?}")]
    WidthMismatch(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors from ListOps parsing, generation, and tokenization.
#[derive(Debug, Error)]
pub enum ListOpsError {
    #[error("parse error at token {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("token id {0} outside the vocabulary")]
    UnknownId(u32),
    #[error("unsatisfiable generator config: {0}")]
    Config(String),
}

/// Errors reading or validating run configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for key {key:?}")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors in the checkpoint container format.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated or corrupt: {0}")]
    Truncated(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("unexpected tensor {0:?} in checkpoint")]
    UnexpectedTensor(String),
    #[error("shape mismatch for tensor {name:?}: model wants {expected:?}, file has {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("config error in checkpoint: {0}")]
    Config(String),
}

/// Errors from the training and evaluation loops.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "non-finite loss {loss} at epoch {epoch} step {step} (lr {lr:.3e}, grad norm {grad_norm:.3e})"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        lr: f64,
        grad_norm: f64,
        loss: f64,
    },
    #[error("vocabulary mismatch: checkpoint has {model} symbols, data needs id {data}")]
    VocabMismatch { model: usize, data: u32 },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
