use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = D3Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum D3Error {
    #[error("too few frames: got {got}, need at least {min}")]
    TooFewFrames { got: usize, min: usize },

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("frame {index} has a zero-norm embedding")]
    DegenerateVector { index: usize },

    #[error("non-finite value at frame {frame}, component {component}")]
    NonFinite { frame: usize, component: usize },

    #[error("cannot decode {path}: {reason}")]
    DecodeError { path: PathBuf, reason: String },

    #[error("{0} contains no frames")]
    EmptySource(PathBuf),

    #[error("frame too small after crop: {width}x{height}")]
    FrameTooSmall { width: u32, height: u32 },

    #[error("model error: {0}")]
    ModelError(String),

    #[error("encoder produced a non-finite value in frame {frame}")]
    EncoderNumericError { frame: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("manifest line {line}: {reason}")]
    ManifestError { line: usize, reason: String },

    #[error("video {id}: {reason}")]
    EntryFailed { id: String, reason: String },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl D3Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        D3Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that invalidate the whole run rather than a single video.
    pub fn is_config_error(&self) -> bool {
        matches!(self, D3Error::ConfigError(_) | D3Error::ModelError(_))
    }
}
