use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid horizon: t0 = {t0}, tf = {tf} (need tf > t0)")]
    InvalidHorizon { t0: f64, tf: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown builtin instance `{0}`")]
    UnknownInstance(String),

    #[error("Euler simulation overflowed at step {step} (unstable step size?)")]
    Overflow { step: usize },

    #[error("discrete system is uncontrollable on this grid (Gram matrix singular, min eigenvalue {min_eigenvalue:e})")]
    Uncontrollable { min_eigenvalue: f64 },

    #[error("finite-difference window [{lo}, {hi}] leaves the sampled horizon")]
    InsufficientWindow { lo: f64, hi: f64 },

    #[error("Dykstra correction norm {correction_norm:e} exceeded {limit:e}; the sets likely do not intersect")]
    LikelyInfeasible { correction_norm: f64, limit: f64 },

    #[error("no feasible bound found below {limit}")]
    UnboundedBracket { limit: f64 },

    #[error("gap solver did not converge at probe a = {a} after {iterations} iterations")]
    ProbeUnconverged { a: f64, iterations: usize },

    #[error("brute-force oracle limited to {limit} coordinates, instance has {size}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("theorem precondition violated: {0}")]
    PreconditionViolated(String),
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
