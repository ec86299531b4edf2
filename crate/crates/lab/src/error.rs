use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config at {path}: {message}")]
    ConfigInvalid { path: String, message: String },

    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: nlslab_core::Error,
    },

    /// Failure of a computation shared between callers, as its message.
    #[error("{0}")]
    Shared(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::ConfigInvalid { .. } => 2,
            _ => 3,
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: &str) -> LabResult<T>;
}

impl<T> Context<T> for nlslab_core::Result<T> {
    fn context(self, what: &str) -> LabResult<T> {
        self.map_err(|source| LabError::Numerical {
            context: what.to_string(),
            source,
        })
    }
}
