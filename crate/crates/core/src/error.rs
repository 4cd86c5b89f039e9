use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),

    #[error("expected mono audio, found {0} channels")]
    ChannelCount(u16),

    #[error("unsupported WAV encoding: format {format}, {bits} bits per sample")]
    UnsupportedEncoding { format: u16, bits: u16 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("utterances manifest, line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid features: {0}")]
    Invariant(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical error at frame {frame}: {reason}")]
    Numeric { frame: usize, reason: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing speaker information: {0}")]
    MissingSpeaker(String),

    #[error("utterance `{name}`: {source}")]
    Utterance {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{} utterances failed, first: {}", .0.len(), .0[0])]
    Batch(Vec<Error>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
