use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate mixture component for class {class}")]
    DegenerateComponent { class: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::Dimension(_) => "dimension",
            Error::DegenerateComponent { .. } => "degenerate_component",
            Error::Numerical(_) => "numerical",
            Error::MissingLabels(_) => "missing_labels",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
