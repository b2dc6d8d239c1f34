use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error at ({row}, {col}): {reason}")]
    Domain {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure ({context}): {reason}")]
    Numeric { context: String, reason: String },
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            reason: reason.into(),
        }
    }

    /// Prefixes the context of a numeric failure, leaving other variants untouched.
    pub(crate) fn with_context(self, outer: impl AsRef<str>) -> Self {
        match self {
            Error::Numeric { context, reason } => Error::Numeric {
                context: format!("{}, {}", outer.as_ref(), context),
                reason,
            },
            other => other,
        }
    }
}
