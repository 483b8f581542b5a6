use std::path::PathBuf;

/// Errors produced by the provenance engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("insufficient matches: need at least {needed}, have {available}")]
    InsufficientMatches { needed: usize, available: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("query id mismatch: expected {expected:?}, found {found:?}")]
    QueryIdMismatch { expected: String, found: String },

    #[error("query yielded no keypoints")]
    EmptyQueryFeatures,

    #[error("index unavailable: {0}")]
    IndexUnavailable(String),

    #[error("manifest parse error at line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("no ground truth for query {0:?}")]
    MissingGroundTruth(String),

    #[error("insufficient base images: need {needed}, found {available}")]
    InsufficientBaseImages { needed: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
