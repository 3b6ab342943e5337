use autograd::TensorError;

/// Every failure the library reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error in {stage}: {detail}")]
    Numeric { stage: String, detail: String },
    #[error("weight load error: {0}")]
    WeightLoad(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn numeric(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { stage: stage.into(), detail: detail.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) => 2,
            Error::Io { .. } | Error::Image(_) | Error::Ingest(_) | Error::Checkpoint(_) | Error::WeightLoad(_) => 3,
            Error::Numeric { .. } | Error::UndefinedMetric(_) => 4,
            Error::Shape(_) | Error::Generation(_) => 5,
        }
    }
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Shape(s) => Error::Shape(s),
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
