use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("sequence too short in {op}: length {len} cannot fit kernel {kernel} (padding {padding}, stride {stride})")]
    SequenceTooShort {
        op: &'static str,
        len: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token id {id} at position {index} is outside the vocabulary of {vocab}")]
    Token { index: usize, id: usize, vocab: usize },

    #[error("empty utterance: durations sum to zero frames")]
    EmptyUtterance,

    #[error("mel length mismatch: predicted {predicted} frames, target {target}")]
    Alignment { predicted: usize, target: usize },

    #[error("waveform has {frames} frames but durations sum to {durations}")]
    Misalignment { frames: usize, durations: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("missing configuration key `{0}`")]
    MissingKey(String),

    #[error("bad archive magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported archive version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("tensor `{name}` has shape {found:?}, config expects {expected:?}")]
    ArchiveShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("archive truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed archive: {0}")]
    Format(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
