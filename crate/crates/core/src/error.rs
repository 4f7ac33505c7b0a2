use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("too few swing samples for threshold calibration: got {got}, need at least {need}")]
    TooFewSwingSamples { got: usize, need: usize },

    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("body weight must be positive, got {0} N")]
    NonPositiveBodyWeight(f64),

    #[error("series too short: {what} needs at least {need} samples, got {got}")]
    TooShort {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("insufficient events for synchronization: insole {insole}, reference {reference} (need >= 3 each)")]
    InsufficientEvents { insole: usize, reference: usize },

    #[error("poor alignment after synchronization: residual RMS {rms_ms:.1} ms exceeds 30 ms")]
    PoorAlignment { rms_ms: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training data is empty")]
    EmptyData,

    #[error("training diverged (loss = {0})")]
    DivergenceDetected(f64),

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("no stance phase found in window")]
    NoStanceFound,

    #[error("stance too short: {0} samples (need >= 4)")]
    StanceTooShort(usize),

    #[error("empty series")]
    Empty,

    #[error("reference series has zero range")]
    ZeroRange,

    #[error("series is constant; correlation undefined")]
    ConstantSeries,

    #[error("too few subjects: got {got}, need at least {need}")]
    TooFewSubjects { got: usize, need: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("invalid channel manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid trial {0}")]
    InvalidTrial(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("missing inputs: {0}")]
    MissingInputs(String),

    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
