use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step index {t} outside 1..={max}")]
    StepIndex { t: usize, max: usize },

    #[error("degenerate schedule: {0}")]
    DegenerateSchedule(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate transition: {0}")]
    DegenerateTransition(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid denoiser: {0}")]
    InvalidDenoiser(String),

    #[error("trace exhausted at seed {seed}, timestep {t}")]
    TraceExhausted { seed: usize, t: usize },

    #[error("trace checksum mismatch: manifest {expected:08x}, data {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },

    #[error("truncated trace {path}: expected {expected} bytes, found {actual}")]
    TruncatedTrace { path: PathBuf, expected: u64, actual: u64 },

    #[error("malformed trace manifest: {0}")]
    Manifest(String),

    #[error("invalid timestep grid: {0}")]
    Grid(String),

    #[error("invalid acceleration plan: {0}")]
    Plan(String),

    #[error("PSNR undefined: reference has zero peak-to-peak range")]
    UndefinedPsnr,

    #[error("zero-norm reference: {0}")]
    ZeroNorm(&'static str),

    #[error("misaligned reports: {0}")]
    Misaligned(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for the CLI: 2 for configuration problems,
    /// 3 for numeric failures, 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownPreset(_)
            | Error::Plan(_)
            | Error::Grid(_)
            | Error::InvalidSchedule(_)
            | Error::InvalidDenoiser(_) => 2,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Manifest(_)
            | Error::ChecksumMismatch { .. }
            | Error::TruncatedTrace { .. } => 4,
            Error::StepIndex { .. }
            | Error::DegenerateSchedule(_)
            | Error::DimensionMismatch { .. }
            | Error::DegenerateTransition(_)
            | Error::NonFinite(_)
            | Error::TraceExhausted { .. }
            | Error::UndefinedPsnr
            | Error::ZeroNorm(_)
            | Error::Misaligned(_) => 3,
        }
    }
}
