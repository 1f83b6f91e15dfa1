use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("projected CRS required: {0} (reproject the layer to a metric CRS)")]
    GeographicCrs(String),
    #[error("CRS mismatch: {0} vs {1}")]
    CrsMismatch(String, String),
    #[error("empty layer: {0}")]
    EmptyLayer(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Parse { path: path.into(), reason: reason.to_string() }
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// errors, 3 for bad input data, 4 for any other failure inside a stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Stage { source, .. } => match source.exit_code() {
                4 | 2 => source.exit_code(),
                _ if matches!(**source, Error::Io { .. } | Error::Geometry(_)) => 4,
                _ => 3,
            },
            _ => 3,
        }
    }
}
