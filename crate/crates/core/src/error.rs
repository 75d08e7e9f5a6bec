use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("corrupt audio file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },
    #[error("clean signal is silent; SNR is undefined")]
    SilentClean,
    #[error("noise mixture is silent")]
    SilentNoiseMixture,
    #[error("need between 1 and 4 noises, got {0}")]
    NoiseCount(usize),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("count {count} too small: the test grid needs at least {needed} entries")]
    CountTooSmall { count: usize, needed: usize },
    #[error("too few frames: have {have}, need {need}")]
    TooFewFrames { have: usize, need: usize },
    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("bad layer dimensions: {0}")]
    BadDims(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}: {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("model format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("frame index {index} out of range for {frames} frames")]
    IndexOutOfRange { index: usize, frames: usize },
    #[error("too little active speech for STOI: {frames} frames, need {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("every frame of the reference signal is silent")]
    AllSilent,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
