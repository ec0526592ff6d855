use std::path::PathBuf;

/// Errors raised by the model, optimizer and dataset layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Invariant { field: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error(
        "voxel {voxel} lies {distance:.3e} m from {endpoint} position {position}, below the {epsilon:.1e} m limit"
    )]
    DegenerateGeometry {
        voxel: usize,
        endpoint: &'static str,
        position: usize,
        distance: f64,
        epsilon: f64,
    },

    #[error("non-finite value in {block}")]
    NonFinite { block: &'static str },

    #[error("unknown {what} `{name}`")]
    UnknownName { what: &'static str, name: String },

    #[error("missing dataset file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{} holds {actual} bytes but metadata implies {expected}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("malformed json in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Invariant { .. } => "E_INVARIANT",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::IndexOutOfRange { .. } => "E_INDEX",
            Error::DegenerateGeometry { .. } => "E_DEGENERATE",
            Error::NonFinite { .. } => "E_NON_FINITE",
            Error::UnknownName { .. } => "E_UNKNOWN_NAME",
            Error::MissingFile { .. } => "E_MISSING_FILE",
            Error::SizeMismatch { .. } => "E_SIZE_MISMATCH",
            Error::Json { .. } => "E_JSON",
            Error::Io { .. } => "E_IO",
        }
    }

    /// True for errors caused by bad inputs rather than failures during a run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::DegenerateGeometry { .. } | Error::NonFinite { .. }
        )
    }

    pub(crate) fn invariant(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invariant {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
