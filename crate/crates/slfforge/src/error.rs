//! Error type shared across the crate.

/// Errors raised by problem evaluation, direction solves and jump solves.
///
/// Failures that are *outcomes* of a generator run (line search stalls,
/// missing descent, guidability loss) are reported here by the low-level
/// operations; the generator catches them and records an outcome instead of
/// propagating.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("normalization violated: q0 = {q0} must be positive")]
    NormalizationViolated { q0: f64 },

    #[error("SLF/problem pairing not supported: {0}")]
    IncompatibleSlf(String),

    #[error("recipe incompatible with problem: {0}")]
    IncompatibleRecipe(String),

    #[error("singular metric in direction solve (condition estimate {cond:?})")]
    SingularMetric { cond: Option<f64> },

    #[error("direction cannot decrease the SLF: DS = {ds}")]
    NoDescent { ds: f64 },

    #[error("guidability failure: control cannot enforce the required descent rate here")]
    GuidabilityFailure,

    #[error("line search failed after {evals} SLF evaluations (last h = {h}{})",
            if *.unbounded { ", direction appears unbounded" } else { "" })]
    LineSearchFailed {
        evals: usize,
        h: f64,
        unbounded: bool,
    },

    #[error("evaluator failure in {op}{}: non-finite value",
            at.map(|h| format!(" at h = {h}")).unwrap_or_default())]
    EvaluatorFailure { op: &'static str, at: Option<f64> },

    #[error("unknown problem '{0}' (not a registry name or readable file)")]
    UnknownProblem(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
