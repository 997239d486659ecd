use std::path::PathBuf;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("volume dimension {axis} is {dim}, smaller than the patch extent {extent}")]
    DimensionTooSmall { axis: char, dim: usize, extent: usize },

    #[error("{count} voxels are not covered by any patch (first uncovered: {first:?})")]
    CoverageGap {
        count: usize,
        first: (usize, usize, usize),
        uncovered: Vec<(usize, usize, usize)>,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("zero-norm input: {0}")]
    ZeroNorm(&'static str),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("payload length mismatch in {path}: expected {expected} bytes, found {found}")]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("atom {atom} has norm {norm}, expected 1")]
    AtomNorm { atom: usize, norm: f64 },

    #[error("column {index}: {source}")]
    Column {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("origin {origin:?} is out of range")]
    OutOfRange { origin: (usize, usize, usize) },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidConfig(_) => true,
            Error::Column { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
