use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("SVD did not converge after {sweeps} Jacobi sweeps (off-diagonal ratio {residual:.3e})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },

    #[error("degenerate basis: conditioning {conditioning:.3e} below threshold {threshold:.1e}")]
    DegenerateBasis { conditioning: f64, threshold: f64 },

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotSpd(String),

    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        step: Option<usize>,
    },

    #[error("state diverged at step {step} (norm {norm:.3e})")]
    Divergence { step: usize, norm: f64 },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("degenerate input for {analysis}: {reason}")]
    Degenerate {
        analysis: &'static str,
        reason: String,
    },

    #[error("scale s = {s} coincides with d.e = {de}; the rank-1 iso-scale manifold is not defined, use the rank-2 manifolds")]
    SpecialScale { s: f64, de: f64 },

    #[error("unknown experiment `{id}`; valid ids: {valid}")]
    UnknownExperiment { id: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
