use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants are grouped so a front end can map them onto stable exit codes:
/// [`Error::category`] tells configuration problems from data problems and
/// numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown {kind} '{value}'")]
    Enumeration { kind: &'static str, value: String },

    #[error("unknown node id '{0}'")]
    Lookup(String),

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("loss function is not deterministic: {0}")]
    Determinism(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Argument(_) | Error::Config(_) => ErrorCategory::Config,
            Error::Schema(_)
            | Error::Enumeration { .. }
            | Error::Lookup(_)
            | Error::Split(_)
            | Error::Coverage(_)
            | Error::Evaluation(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorCategory::Data,
            Error::Dimension { .. } | Error::Numerical(_) | Error::Determinism(_) => ErrorCategory::Numerical,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
