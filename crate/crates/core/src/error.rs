use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("malformed segmentation: {0}")]
    MalformedSegmentation(String),

    #[error("missing feature for scale {scale} frame {frame} region {region}")]
    MissingFeature { scale: u16, frame: u32, region: u32 },

    #[error("missing global feature for frame {0}")]
    MissingGlobalFeature(u32),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Malformed(_) => "malformed-input",
            Error::MalformedSegmentation(_) => "malformed-segmentation",
            Error::MissingFeature { .. } | Error::MissingGlobalFeature(_) => "missing-feature",
            Error::MissingInput(_) => "missing-input",
            Error::InvalidGraph(_) => "invalid-graph",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
