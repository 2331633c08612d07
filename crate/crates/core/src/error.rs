use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame has {actual} pixels, expected {expected} ({width}x{height})")]
    FrameSize {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },

    #[error("cell {cell_id} covers no pixels in this frame")]
    DegenerateCell { cell_id: usize },

    #[error("cell has an empty pixel set")]
    EmptyCell,

    #[error("cell {cell_id} is invalid: {reason}")]
    InvalidCell { cell_id: usize, reason: String },

    #[error("cell {cell_id} is degenerate in every frame")]
    CellNeverVisible { cell_id: usize },

    #[error("invalid landmarks: {0}")]
    Landmarks(String),

    #[error("no cells configured")]
    NoCells,

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("signal has {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("spectrogram carries no power")]
    EmptySpectrogram,

    #[error("curves do not overlap in time")]
    NoOverlap,

    #[error("no paired samples to score")]
    EmptyPairing,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("input not found: {0}")]
    InputMissing(PathBuf),

    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Stable machine-readable class used in CLI error lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InputMissing(_) => "input-missing",
            Error::Parse { .. } | Error::Image { .. } | Error::FrameSize { .. } | Error::Landmarks(_) => "parse",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::Config(_) => "config",
            Error::DegenerateCell { .. }
            | Error::EmptyCell
            | Error::InvalidCell { .. }
            | Error::CellNeverVisible { .. }
            | Error::NoCells => "cell",
            Error::SignalTooShort { .. } => "signal-too-short",
            Error::EmptySpectrogram => "empty-spectrogram",
            Error::NoOverlap => "no-overlap",
            Error::EmptyPairing => "empty-pairing",
            Error::Io(_) => "io",
        }
    }

    /// Errors caused by the numbers rather than by malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::EmptySpectrogram | Error::CellNeverVisible { .. })
    }
}
