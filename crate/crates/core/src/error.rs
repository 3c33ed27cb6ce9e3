use thiserror::Error;

/// Errors raised by tensor operations, the gradient tape and optimizers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: output size ({size} + 2*{padding} - {kernel}) / {stride} + 1 is not a positive integer")]
    OutputSize { op: &'static str, size: usize, kernel: usize, stride: usize, padding: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("value is not recorded on this tape")]
    NotTaped,
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
}

/// Errors raised while describing, splitting or instantiating architectures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("illegal split position {position}; legal positions are 1..={max}")]
    IllegalSplit { position: usize, max: usize },
    #[error("compression_channels must be >= 1")]
    CompressionChannels,
    #[error("layer {index} ({kind}): {reason}")]
    Layer { index: usize, kind: String, reason: String },
    #[error("architecture has no legal split positions")]
    NoSplits,
    #[error("unknown architecture '{0}'")]
    UnknownArchitecture(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by the quantizer and the wire codec.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("negative feature value {value} at index {index}; quantizer expects post-ReLU input")]
    NegativeInput { index: usize, value: f64 },
    #[error("bit width {0} outside 1..=8")]
    BitWidth(u8),
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("declared payload {declared} bytes does not match expected {expected}")]
    SizeMismatch { declared: usize, expected: usize },
    #[error("{labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("dimension {0} does not fit the 16-bit header field")]
    DimOverflow(usize),
    #[error("code {code} exceeds the {bits}-bit range")]
    CodeRange { code: u8, bits: u8 },
    #[error("invalid scale {0}")]
    Scale(f32),
    #[error("invalid batch shape {0:?}; expected N×C×H×W with positive dims")]
    Shape(Vec<usize>),
}

/// Transport-level failures.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("delivery failed: channel down during [{depart:.6}, {arrival:.6}] s")]
    ChannelDown { depart: f64, arrival: f64 },
    #[error("socket: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Top-level error for training runs, planning, configuration and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Model(_) => "model",
            Error::Wire(_) => "wire",
            Error::Transport(_) => "transport",
            Error::Config(_) => "config",
            Error::Data(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
