use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("mesh graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("vertex {vertex} has degree {degree}; every vertex needs at least 2 neighbors")]
    IsolatedVertex { vertex: usize, degree: usize },
    #[error("non-finite value in {module}: {what}")]
    NonFinite { module: &'static str, what: String },
    #[error("vertex {vertex} projects outside the image frame")]
    OutOfFrame { vertex: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn non_finite(module: &'static str, what: impl Into<String>) -> Self {
        Error::NonFinite {
            module,
            what: what.into(),
        }
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
