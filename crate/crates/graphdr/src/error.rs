//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphDrError {
    #[error("shape mismatch: {left} vs {right} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {max_delta:.3e})")]
    NotSymmetric { max_delta: f64 },

    #[error("non-finite value produced in {op}")]
    NonFinite { op: &'static str },

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("{context}: {message}")]
    InvalidArgument {
        context: &'static str,
        message: String,
    },

    #[error("dataset parse error at {path}:{line}: {message}")]
    DatasetParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate node id {id:?}")]
    DuplicateNodeId { id: String },

    #[error("unknown class {class:?}")]
    UnknownClass { class: String },

    #[error("class {class:?} has only {available} nodes, {requested} requested")]
    InsufficientClassNodes {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("clustering needs at least two clusters")]
    SingleCluster,

    #[error("all cluster diameters are zero; Dunn index undefined")]
    ZeroDiameter,

    #[error("checkpoint is corrupt: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphDrError>;
