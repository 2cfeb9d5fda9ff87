use std::path::PathBuf;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors reported by detectors, evaluation and file IO.
///
/// The variants are grouped so a caller (e.g. the CLI) can distinguish
/// data problems (bad files, malformed input, shape mismatches) from
/// numeric failures (singular systems, degenerate inputs, refused sizes).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input values are structurally invalid: empty, non-finite, or
    /// otherwise outside an operation's domain.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Two inputs that must agree in shape do not.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// The input carries no usable signal (e.g. all points identical).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A symmetric system was not positive definite even after the ridge
    /// was applied.
    #[error("matrix of dimension {dim} not positive definite (ridge {ridge:.3e})")]
    NotPositiveDefinite { dim: usize, ridge: f64 },

    /// A dense-kernel operation was refused because the pixel count exceeds
    /// the configured cap.
    #[error("background of {n} pixels exceeds the dense-kernel cap of {cap}; \
             raise the cap explicitly to override")]
    TooLarge { n: usize, cap: usize },

    /// A computation produced non-finite values (overflow or catastrophic
    /// cancellation) despite finite inputs.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file could not be parsed in the expected format.
    #[error("malformed {format} file {path:?}: {reason}")]
    Malformed {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    /// Underlying IO failure.
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by unreadable or inconsistent input data
    /// (as opposed to numeric failures during computation).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidData(_)
                | Error::ShapeMismatch { .. }
                | Error::Malformed { .. }
                | Error::Io { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
