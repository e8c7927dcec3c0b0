use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is singular or indefinite: non-positive pivot {value:e} at index {pivot}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: |A[{row},{col}] - A[{col},{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("integration blew up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error(
        "projection did not converge after {iterations} iterations (residual {residual_norm:e})"
    )]
    NotConverged {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("fixed-Jacobian projection diverged after {iterations} iterations (residual {residual_norm:e})")]
    ProjectionDiverged {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("initial state is off the constraint manifold (|g|_inf = {0:e})")]
    InconsistentInitialState(f64),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("malformed tape: {0}")]
    MalformedTape(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted { epoch: usize, reason: String },

    #[error("checkpoint does not match system: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable snake_case identifier for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::NotPositiveDefinite { .. } => "not_positive_definite",
            Self::NotSymmetric { .. } => "not_symmetric",
            Self::NonFinite(_) => "non_finite",
            Self::BlowUp { .. } => "blow_up",
            Self::NotConverged { .. } => "not_converged",
            Self::ProjectionDiverged { .. } => "projection_diverged",
            Self::InconsistentInitialState(_) => "inconsistent_initial_state",
            Self::UnknownSystem(_) => "unknown_system",
            Self::UnknownMode(_) => "unknown_mode",
            Self::InvalidArgument(_) => "invalid_argument",
            Self::DataQuality(_) => "data_quality",
            Self::MalformedTape(_) => "malformed_tape",
            Self::Parse { .. } => "parse",
            Self::TrainingAborted { .. } => "training_aborted",
            Self::CheckpointMismatch(_) => "checkpoint_mismatch",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
            Self::Toml(_) => "toml",
        }
    }
}
