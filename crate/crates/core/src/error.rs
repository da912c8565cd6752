use std::fmt;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left} and {right}")]
    Dimension {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("{module}: {source}")]
    Within {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("variant `{name}`: {source}")]
    Variant {
        name: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn dimension(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: Shape(left.to_vec()),
            right: Shape(right.to_vec()),
        }
    }

    /// Tags the error with the module it surfaced from.
    pub fn within(self, module: &'static str) -> Self {
        Error::Within {
            module,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Shape wrapper so dimension errors print as `[2, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}
