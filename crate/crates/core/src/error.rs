use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the subsystem that raises them; the CLI maps the
/// groups onto its exit-code taxonomy via [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    // tensor / io
    #[error("shape {shape:?} does not match {len} data elements")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("tensor contains a non-finite value")]
    NonFinite,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid video clip: {0}")]
    InvalidClip(String),
    #[error("frame directory {path} holds {found} readable frames, need at least 2")]
    MissingFrames { path: PathBuf, found: usize },
    #[error("frame {file} has dimensions {got:?}, expected {expected:?}")]
    InconsistentDimensions { file: String, expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor format version {0}")]
    VersionMismatch(u8),
    #[error("truncated tensor payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("difference order {order} must be below clip length {len}")]
    OrderTooLarge { order: usize, len: usize },
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    // sampling
    #[error("crop box {0:?} lies outside the frame")]
    CropOutOfBounds(crate::tensor::CropBox),
    #[error("video {id} of length {len} admits no negative start with tau={tau}")]
    VideoTooShort { id: String, len: usize, tau: usize },
    #[error("frame {height}x{width} admits no second crop of size {crop} displaced by {offset}")]
    FrameTooSmall { height: usize, width: usize, crop: usize, offset: usize },

    // augment
    #[error("crop of {crop} pixels exceeds resized frame of {size} pixels")]
    CropTooLarge { crop: usize, size: usize },
    #[error("cutout region {0:?} lies outside the frame")]
    RegionOutOfBounds(crate::tensor::CropBox),
    #[error("external mix requires a donor from a different video")]
    MissingDonor,

    // model
    #[error("input shape {0:?} is incompatible with the encoder")]
    ShapeIncompatible(Vec<usize>),
    #[error("embedding has zero norm before normalization")]
    ZeroNorm,

    // objective
    #[error("loss requires a non-empty batch")]
    EmptyBatch,
    #[error("batch of {batch} anchors exceeds bank capacity {capacity}")]
    BatchExceedsCapacity { batch: usize, capacity: usize },

    // training
    #[error("gradient for {0} contains a non-finite value")]
    NonFiniteGradient(String),

    // configuration
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration is infeasible: {0}")]
    ConfigInfeasible(String),

    // evaluation
    #[error("checkpoint is corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("dataset is invalid: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Data,
    Checkpoint,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::ConfigInfeasible(_) | Error::Json(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
            Error::CheckpointCorrupt(_)
            | Error::BadMagic(_)
            | Error::VersionMismatch(_)
            | Error::TruncatedPayload { .. } => ErrorKind::Checkpoint,
            Error::MissingFrames { .. }
            | Error::InconsistentDimensions { .. }
            | Error::UnsupportedImage(_)
            | Error::VideoTooShort { .. }
            | Error::FrameTooSmall { .. }
            | Error::CropOutOfBounds(_)
            | Error::CropTooLarge { .. }
            | Error::MissingDonor
            | Error::InvalidClip(_)
            | Error::ShapeIncompatible(_)
            | Error::Dataset(_) => ErrorKind::Data,
            _ => ErrorKind::Internal,
        }
    }
}
