use std::path::PathBuf;

use crate::prompt::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unsupported sample rate {found} Hz; resample the input to 16000 Hz first")]
    SampleRate { found: u32 },
    #[error("unsupported channel count {0}; only mono audio is accepted")]
    UnsupportedChannels(u16),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("inconsistent frame parameters: {0}")]
    FrameParams(String),
    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("signal is silent: {0}")]
    Silent(&'static str),
    #[error("no measurable decay")]
    NoDecay,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("empty label vocabulary")]
    EmptyVocabulary,
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
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
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Wav { .. })
    }
}
