use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed Standard MIDI File.
    #[error("MIDI parse error at byte {offset}: {msg}")]
    MidiParse { offset: usize, msg: String },

    /// Input parsed but violates a roll invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Fingering sidecar is inconsistent with the roll.
    #[error("fingering error: {0}")]
    Fingering(String),

    /// Wrist script could not place a finger over its key.
    #[error("unreachable note at step {step}, key {key}: {msg}")]
    Unreachable { step: usize, key: u8, msg: String },

    /// Caller broke an operation precondition (e.g. stepping past the end).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two sequences that must align do not.
    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Training produced non-finite values.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config error: {0}")]
    Config(String),

    /// A text artifact could not be decoded.
    #[error("format error in {path}: line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
