use std::path::PathBuf;

/// Errors produced by the toolkit.
///
/// Variants that correspond to a named precondition carry the short message
/// operators see on the command line ("empty signal", "too short", ...).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("too short: signal has {samples} samples, one frame needs {frame_len}")]
    TooShort { samples: usize, frame_len: usize },
    #[error("fft too short: n_fft {n_fft} < frame length {frame_len}")]
    FftTooShort { n_fft: usize, frame_len: usize },
    #[error("insufficient frames: {got} (need at least {need})")]
    InsufficientFrames { got: usize, need: usize },
    #[error("no frames selected")]
    NoFramesSelected,
    #[error("more bands than bins: {bands} bands, {bins} bins")]
    MoreBandsThanBins { bands: usize, bins: usize },
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
    #[error("too few bins: {bins} bins cannot hold {filters} filters")]
    TooFewBins { bins: usize, filters: usize },
    #[error("need ≥2 frames, got {0}")]
    NeedTwoFrames(usize),
    #[error("degenerate subband")]
    DegenerateSubband,
    #[error("zero within-class variance at filter {0}")]
    ZeroWithinClassVariance(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("single-class trial set: need at least one target and one impostor")]
    SingleClass,
    #[error("trial key mismatch: {0}")]
    KeyMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported wav {field}: {value}")]
    UnsupportedWav { field: &'static str, value: String },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("document kind {found:?} where {expected:?} was expected")]
    WrongKind { expected: String, found: String },
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u64),
    #[error("checksum mismatch: payload digest {found}, provenance records {expected}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
