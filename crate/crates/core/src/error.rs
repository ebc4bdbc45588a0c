use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty signal")]
    EmptySignal,

    #[error("channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        len: usize,
        expected: usize,
    },

    #[error("signal of {len} samples is shorter than one window ({window} samples)")]
    SignalTooShort { len: usize, window: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("weighted normal equations for bin {bin} are singular (condition estimate {condition:.3e})")]
    SingularSystem { bin: usize, condition: f64 },

    #[error("PSD prior `{prior}` failed at iteration {iteration}: {source}")]
    Prior {
        prior: String,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("nonpositive PSD value {value} at frame {frame}, bin {bin}")]
    NonPositivePsd { frame: usize, bin: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no active frames in reference signal")]
    NoActiveFrames,

    #[error("no frames admitted LP analysis")]
    NoAnalyzableFrames,

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("missing forward cache; run forward_train first")]
    MissingCache,

    #[error("scene: {0}")]
    Scene(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
