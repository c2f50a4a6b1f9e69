use thiserror::Error;

/// Errors produced by the kinsdf library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("not a rotation matrix (orthogonality error {orthogonality:.3e}, det {det:.6})")]
    InvalidRotation { orthogonality: f64, det: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("not enough {sign} samples: need {needed}, have {available}")]
    Shortage {
        sign: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("non-finite value {value} at {context}")]
    NonFinite { value: f64, context: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Degenerate(_) => "degenerate",
            Error::InvalidRotation { .. } => "invalid_rotation",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Empty(_) => "empty",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BehindCamera(_) => "behind_camera",
            Error::Shortage { .. } => "shortage",
            Error::NonFinite { .. } => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit status: 2 configuration, 3 input parse, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Io(_) => 2,
            Error::Parse { .. } | Error::Json(_) | Error::DimensionMismatch { .. } | Error::Empty(_) => 3,
            Error::Degenerate(_)
            | Error::InvalidRotation { .. }
            | Error::BehindCamera(_)
            | Error::Shortage { .. }
            | Error::NonFinite { .. }
            | Error::Diverged { .. } => 4,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
