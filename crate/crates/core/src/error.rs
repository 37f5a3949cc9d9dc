use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl std::fmt::Display, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            detail: detail.into(),
        }
    }

    /// The description without its category, on one line.
    pub fn message(&self) -> String {
        let text = match self {
            Error::Shape { op, detail } => format!("{op}: {detail}"),
            Error::Graph(m) | Error::Config(m) | Error::Data(m) | Error::NonFinite(m) => m.clone(),
            Error::Format { path, detail } => format!("{path}: {detail}"),
            Error::Io { path, source } => format!("{}: {source}", path.display()),
        };
        text.replace('\n', " ")
    }

    /// Stable, machine-parsable category used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Graph(_) => "graph",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Data(_) => "data",
            Error::NonFinite(_) => "non-finite",
        }
    }
}
