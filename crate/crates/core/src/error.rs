use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-positive disparity at joint {joint}")]
    NonPositiveDisparity { joint: usize },

    #[error("non-positive depth at joint {joint}")]
    NonPositiveDepth { joint: usize },

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("degenerate crop box: all joints coincide and margin is zero")]
    DegenerateBox,

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("empty heatmap for joint {joint}: joint lies too far outside the grid")]
    EmptyHeatmap { joint: usize },

    #[error("unnormalized target for joint {joint}: sum {sum}")]
    UnnormalizedTarget { joint: usize, sum: f64 },

    #[error("hand out of frustum: joint {joint} projects outside the {view} image")]
    HandOutOfFrustum { joint: usize, view: &'static str },

    #[error("corrupt dataset{}: {msg}", .id.map(|i| format!(" (sample {i:06})")).unwrap_or_default())]
    CorruptDataset { id: Option<u64>, msg: String },

    #[error("illegal augmentation: {0}")]
    IllegalAugmentation(String),

    #[error("frozen parameter changed: {0}")]
    FrozenViolation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(id: Option<u64>, msg: impl Into<String>) -> Self {
        Error::CorruptDataset {
            id,
            msg: msg.into(),
        }
    }

    /// Short stable identifier, used in machine-parseable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositiveDisparity { .. } => "NonPositiveDisparity",
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::InvalidRig(_) => "InvalidRig",
            Error::DegenerateBox => "DegenerateBox",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::EmptyHeatmap { .. } => "EmptyHeatmap",
            Error::UnnormalizedTarget { .. } => "UnnormalizedTarget",
            Error::HandOutOfFrustum { .. } => "HandOutOfFrustum",
            Error::CorruptDataset { .. } => "CorruptDataset",
            Error::IllegalAugmentation(_) => "IllegalAugmentation",
            Error::FrozenViolation(_) => "FrozenViolation",
            Error::Numeric(_) => "Numeric",
            Error::Io { .. } => "Io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
