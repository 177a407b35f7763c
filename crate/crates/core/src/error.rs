use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient support: {what} has {got} pixels, need at least {needed}")]
    InsufficientSupport { what: String, got: usize, needed: usize },

    #[error("degenerate image: {0}")]
    DegenerateImage(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{image}: {source}")]
    Image {
        image: String,
        #[source]
        source: Box<Error>,
    },

    #[error("denoiser `{name}` failed: {message}")]
    Denoiser { name: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the image it concerns.
    pub fn for_image(self, image: impl Into<String>) -> Self {
        Error::Image {
            image: image.into(),
            source: Box::new(self),
        }
    }
}
