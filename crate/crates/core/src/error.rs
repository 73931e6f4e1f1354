use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cluster index must be >= 1, got {0}")]
    IndexOutOfRange(usize),

    #[error("monomer density z = {z} is not subcritical (z_s = {z_s})")]
    Supercritical { z: f64, z_s: f64 },

    #[error("mass {mu} is not below the estimated critical mass {mu_s}")]
    SupercriticalMass { mu: f64, mu_s: f64 },

    #[error("truncation N = {n} too small: tail ratio {ratio} is not below 1")]
    TruncationTooSmall { n: usize, ratio: f64 },

    #[error("bisection did not reach tolerance {tol} in {steps} steps (last residual {residual})")]
    ConvergenceFailure {
        tol: f64,
        steps: usize,
        residual: f64,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("coordinate mismatch: expected {expected}, got {found}")]
    CoordinateMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("norm saturated (overflow) for {0}")]
    Saturation(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("step size underflow at t = {t} (dt = {dt}); problem is too stiff for rtol, try a larger rtol or the implicit scheme")]
    Stiffness { t: f64, dt: f64 },

    #[error("step matrix singular after {halvings} step-size halvings")]
    SingularStep { halvings: usize },

    #[error("quasimode windows invalid: {0}")]
    Window(String),

    #[error("experiment invalidated: {0}")]
    Invalidated(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
