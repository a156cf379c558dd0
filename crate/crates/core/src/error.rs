use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unregistered indenter shape id {0}")]
    UnregisteredShape(u32),

    #[error("image dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("image {0}x{1} smaller than {2}x{2} metric window")]
    ImageTooSmall(usize, usize, usize),

    #[error("tensor shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("kernel matrix is not positive definite (degenerate hyperparameters)")]
    NotPositiveDefinite,

    #[error("model has not been fitted/trained")]
    Unfitted,

    #[error("pose component {name}={value} outside allowed range [{lo}, {hi}]")]
    PoseOutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },

    #[error("no contact: all marker displacements are zero")]
    NoContact,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("provenance overlap between train and test sets ({0} shared ids)")]
    ProvenanceOverlap(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("weight container is malformed: {0}")]
    BadWeightFile(String),

    #[error("manifest is invalid: {0}")]
    BadManifest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
