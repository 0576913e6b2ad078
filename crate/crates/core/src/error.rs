use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("invalid shape {rows}x{cols} for {len} labels")]
    InvalidShape { rows: usize, cols: usize, len: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("label {label} exceeds format maximum {max}")]
    Range { label: u64, max: u64 },

    #[error("{metric} is not applicable: {reason}")]
    Inapplicable { metric: &'static str, reason: String },

    #[error("expected a binary array: {0}")]
    NotBinary(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("inconsistent replay sequence: {0}")]
    InconsistentSequence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let offset = err.position().map(|p| p.byte()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::parse(offset, format!("{kind:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
