use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The data carry no information about a portion's parameters.
    #[error("not identifiable: {0}")]
    NonIdentifiable(String),

    /// The size estimate ran past the configured cap or its denominator
    /// collapsed.
    #[error("diverged: {reason} (tau = {tau:.6e})")]
    Diverged { reason: String, tau: f64 },

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("degenerate bootstrap world: {0}")]
    DegenerateWorld(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Short machine-readable tag, used in result files.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonIdentifiable(_) => "non_identifiable",
            Error::Diverged { .. } => "diverged",
            Error::UndefinedEstimate(_) => "undefined_estimate",
            Error::DegenerateWorld(_) => "degenerate_world",
            Error::Unsupported(_) => "unsupported",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
