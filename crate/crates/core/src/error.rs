use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("incompatible shapes {lhs:?} and {rhs:?}")]
    IncompatibleShapes { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor is not recorded on this tape or does not require grad")]
    DetachedTensor,
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("output of {op} would be empty for input {input:?}")]
    OutputTooSmall { op: &'static str, input: Vec<usize> },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("batch norm in train mode needs at least two values per channel")]
    SingleElementBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input size {size} is not divisible by {divisor}")]
    IndivisibleInputSize { size: usize, divisor: usize },
    #[error("layer {layer}: {reason}")]
    ShapeChain { layer: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {0} has no samples")]
    EmptyClass(String),
    #[error("class {0} has no positive or no negative samples")]
    DegenerateClass(usize),
    #[error("image dimensions differ: {lhs:?} vs {rhs:?}")]
    DimensionMismatch { lhs: (usize, usize), rhs: (usize, usize) },
    #[error("class directory {0} is missing")]
    MissingClassDir(PathBuf),
    #[error("no images found in {0}")]
    NoImages(PathBuf),
    #[error("no decodable images in {0}")]
    UndecodableImage(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
