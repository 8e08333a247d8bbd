use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("index ({i}, {j}) out of range for grid of size {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("frequency ({fx}, {fy}) is not a bin of the {n}x{n} frequency grid")]
    OffGridFrequency { fx: f64, fy: f64, n: usize },

    #[error("{what} limited to n <= {limit}, got n = {n}")]
    SizeLimit {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("malformed {kind} data at byte offset {offset}: {message}")]
    Format {
        kind: &'static str,
        offset: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Path {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("variables recorded on different tapes")]
    CrossTape,

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, found: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
