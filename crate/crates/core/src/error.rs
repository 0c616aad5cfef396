use std::path::PathBuf;

use crate::kernel_lab::Spectrum;

pub type Result<T, E = AfmError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AfmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear program solver failed: {0}")]
    Solver(String),

    /// The bisection on the sparsity weight never produced exactly the
    /// requested number of frequencies. Carries the closest spectrum seen.
    #[error("could not reach {target} frequencies, nearest achievable is {achieved}")]
    TargetUnreachable {
        target: usize,
        achieved: usize,
        best: Box<Spectrum>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sketch contains no usable contour points")]
    EmptySketch,

    #[error("unsupported or malformed format: {0}")]
    Format(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("unknown method: {0}")]
    UnknownMethod(String),

    #[error("query expansion unavailable: {0}")]
    QeUnavailable(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AfmError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        AfmError::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// I/O failure tagged with the offending path.
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AfmError::File {
            path: path.into(),
            source,
        }
    }
}
