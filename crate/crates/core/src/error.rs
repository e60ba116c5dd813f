use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported WAV encoding: {field} = {value}")]
    UnsupportedEncoding { field: &'static str, value: String },

    #[error("unsupported channel count: channels = {0} (only mono is accepted)")]
    UnsupportedChannels(u16),

    #[error("truncated WAV file: data chunk declares {declared} samples, only {read} present")]
    TruncatedWav { declared: u32, read: u32 },

    #[error("malformed WAV file: {0}")]
    Wav(String),

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("signal has zero energy")]
    ZeroEnergy,

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too few frames: {frames}, encoder needs at least {min}")]
    TooFewFrames { frames: usize, min: usize },

    #[error("vector norm {0:e} is below the 1e-12 limit")]
    NearZeroNorm(f64),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("tensor `{name}`: {reason}")]
    BadTensor { name: String, reason: String },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
