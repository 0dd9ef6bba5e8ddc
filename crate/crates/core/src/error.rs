use thiserror::Error;

/// Errors shared across system evaluation, impact resolution and hybrid flow.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {context}")]
    NonFiniteInput { context: &'static str },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The mass matrix (or a generator Gram matrix) failed its symmetry or
    /// Cholesky check at the queried point.
    #[error("matrix not positive definite in {context}: {detail}")]
    NotPositiveDefinite {
        context: &'static str,
        detail: String,
    },

    /// Transversality failed at an impact point: the normal velocity is too
    /// small for the reflection to be defined.
    #[error(
        "grazing impact on guard '{guard}': |normal velocity| = {normal_velocity:.3e} \
         below threshold {threshold:.3e}"
    )]
    GrazingImpact {
        guard: String,
        normal_velocity: f64,
        threshold: f64,
    },

    #[error("state off guard surface '{guard}': |h| = {h_abs:.3e} exceeds event tolerance {event_tol:.3e}")]
    OffSurface {
        guard: String,
        h_abs: f64,
        event_tol: f64,
    },

    #[error("degenerate guard gradient on '{guard}': |grad h| = {grad_norm:.3e}")]
    DegenerateGradient { guard: String, grad_norm: f64 },

    /// Guard classification disagreed across the sample set.
    #[error(
        "inconsistent guard samples on '{guard}': {vertical_hits}/{samples} vertical, \
         {horizontal_hits}/{samples} horizontal ({detail})"
    )]
    InconsistentSamples {
        guard: String,
        samples: usize,
        vertical_hits: usize,
        horizontal_hits: usize,
        detail: String,
    },

    #[error("integration step failed at t = {t}: {detail}")]
    StepFailure { t: f64, detail: String },

    /// Two guards crossed within the same base step and their localized event
    /// times tie within the event tolerance.
    #[error("ambiguous crossing at t = {t}: guards '{first}' and '{second}' tie within {tol:.3e}")]
    AmbiguousCrossing {
        t: f64,
        first: String,
        second: String,
        tol: f64,
    },

    /// Shape-space projection requires coordinate generators.
    #[error("shape projection unavailable: symmetry action has no coordinate indices")]
    ShapeProjectionUnavailable,

    #[error("empty sample set in {context}")]
    EmptySamples { context: &'static str },

    #[error("unknown system '{name}'")]
    UnknownSystem { name: String },

    #[error("unknown parameter '{param}' for system '{system}'")]
    UnknownParameter { system: String, param: String },

    #[error("invalid configuration: {detail}")]
    InvalidConfig { detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
