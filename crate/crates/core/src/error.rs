use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands (or an operand and an expectation) have incompatible shapes.
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: String,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A value was outside the range an operation accepts.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Architecture text could not be parsed.
    #[error("parse error at byte {offset}: expected {expected}")]
    Parse { offset: usize, expected: String },

    /// Dense and matrix-shaped items were mixed in one architecture.
    #[error("unsupported architecture mix: {0}")]
    UnsupportedMix(String),

    /// A non-finite value appeared where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The Jacobi SVD did not converge within its sweep cap.
    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNonConvergence { sweeps: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// Every learning-rate probe diverged.
    #[error("all learning-rate probes diverged: {0}")]
    AllProbesDiverged(String),

    /// Cached forward state does not match the network being differentiated.
    #[error("inconsistent state: {0}")]
    State(String),

    /// Malformed delimited text input.
    #[error("{path}: line {line}: {detail}")]
    Csv { path: String, line: u64, detail: String },

    /// Malformed binary or checkpoint input.
    #[error("format error at offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn shape(context: impl Into<String>, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            context: context.into(),
            left,
            right,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (divergence, non-convergence, NaN/Inf).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::SvdNonConvergence { .. }
                | Error::Diverged { .. }
                | Error::AllProbesDiverged(_)
        )
    }
}
