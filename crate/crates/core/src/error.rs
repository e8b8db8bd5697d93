use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the codec, rate control, channel and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no frames")]
    NoFrames,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("zero source dimension")]
    ZeroSourceDimension,

    #[error("negative budget: {0}")]
    NegativeBudget(f64),

    #[error("infeasible trade: {0}")]
    InfeasibleTrade(String),

    #[error("mask index {index} out of range for map of {len} elements")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("stream length {got} does not match plan length {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("zero-power signal")]
    ZeroPower,

    #[error("malformed payload at byte {offset}: {reason}")]
    Payload { offset: usize, reason: String },

    #[error("ms-ssim with {levels} levels needs frames of at least {needed} px; {max_levels} level(s) fit")]
    FrameTooSmall {
        levels: usize,
        needed: usize,
        max_levels: usize,
    },

    #[error("value {0} outside [0, 1]")]
    OutOfUnitRange(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("mixed frame resolutions: {0}")]
    MixedResolutions(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
