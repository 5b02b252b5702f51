use thiserror::Error;

/// Errors raised by the spline kernel, the patch pipeline and the evolution loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("knot {value} already has multiplicity {multiplicity} (degree {degree})")]
    KnotMultiplicity { value: f64, multiplicity: usize, degree: usize },

    #[error("degenerate tangent plane: |S_u × S_v| = {0:e}")]
    DegenerateTangent(f64),

    #[error("degenerate metric: EG - F² = {0:e}")]
    DegenerateMetric(f64),

    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),

    #[error("degenerate chart: {0}")]
    DegenerateChart(String),

    #[error("zero-length chord between consecutive points {0} and {1}")]
    ZeroChord(usize, usize),

    #[error("requested {requested} neighbours but only {available} candidates exist")]
    TooFewCandidates { requested: usize, available: usize },

    #[error("patch {patch} fit failed: {reason}")]
    PatchFit { patch: usize, reason: String },

    #[error("coupled velocity law requires a scalar field value")]
    MissingField,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
