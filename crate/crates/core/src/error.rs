use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid head box {0:?}: need x_min < x_max, y_min < y_max and overlap with the unit square")]
    InvalidBox([f64; 4]),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gaze direction undefined: target coincides with head center")]
    UndefinedDirection,

    #[error("angle undefined: ray of length {0:e} from head center")]
    UndefinedAngle(f64),

    #[error("degenerate evidence map (mass {0:e})")]
    DegenerateEvidence(f64),

    #[error("not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("sample generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("incompatible: {0}")]
    Incompatible(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch} (seed {seed})")]
    Divergence { epoch: usize, seed: u64 },

    #[error("gradient check failed for {name}: {reason}")]
    GradCheck { name: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
