use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents disagree.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    /// A caller-side precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("data error in sample {index}: {message}")]
    Data { index: usize, message: String },

    /// Several independent validation failures, reported together.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
