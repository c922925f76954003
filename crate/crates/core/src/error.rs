use thiserror::Error;

/// Errors raised by the simulator and its analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular point: {0}")]
    Singular(String),

    #[error("perturbation theory is degenerate: |omega_q - omega_r| = {gap:.3e} is below the floor {floor:.3e}")]
    Degenerate { gap: f64, floor: f64 },

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("integrator step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("integrator produced a non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("integrator exceeded {max_steps} steps before reaching t = {t_end}")]
    TooManySteps { max_steps: usize, t_end: f64 },

    #[error("sampling is not uniform: {0}")]
    NonUniformSampling(String),

    #[error("analysis window is too short: {0}")]
    WindowTooShort(String),

    #[error("signal amplitude collapsed below {floor:.3e}")]
    AmplitudeCollapse { floor: f64 },

    #[error("grid does not resolve the state: {0}")]
    Grid(String),

    #[error("Fock truncation exhausted: tail mass {tail_mass:.3e} exceeds {limit:.1e} at t = {t}")]
    Truncation { tail_mass: f64, limit: f64, t: f64 },

    #[error("density matrix lost positivity: minimum eigenvalue {min_eigenvalue:.3e} at t = {t}")]
    Positivity { min_eigenvalue: f64, t: f64 },

    #[error("eigenvalue labels could not be tracked: best overlap {overlap:.3} at coupling {coupling:.3e}")]
    LabelTracking { overlap: f64, coupling: f64 },

    #[error("least-squares fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
