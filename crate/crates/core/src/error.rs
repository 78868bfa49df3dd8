use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 2, data problems (shapes, files) with 3, numeric and training
/// failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Diverged { .. } => "diverged",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dimension(_) | Error::Data(_) | Error::Domain(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Numeric(_) | Error::Diverged { .. } => 4,
        }
    }
}
