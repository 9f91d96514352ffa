use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate ROI: {0}")]
    DegenerateRoi(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("detection loss requires source labels")]
    MissingLabels,

    #[error("between-class variance undefined: {0}")]
    SingleClass(String),

    #[error("ground truth mismatch: {0}")]
    GroundTruthMismatch(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },

    #[error("run interrupted after iteration {iteration}")]
    Interrupted { iteration: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
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
