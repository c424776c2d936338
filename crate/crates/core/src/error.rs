use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown problem `{name}` (available: {available})")]
    UnknownProblem { name: String, available: String },

    #[error("invalid problem definition: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("discontinuity set is empty")]
    EmptyDiscontinuitySet,

    /// The integrator hit `max_steps` before reaching the horizon.
    #[error("step cap of {max_steps} exceeded at t = {t} (y = {y}, delta = {delta})")]
    StepCapExceeded {
        max_steps: u64,
        t: f64,
        y: f64,
        delta: f64,
    },

    #[error("step {step} at t = {t} is below the time resolution")]
    StepUnderflow { t: f64, step: f64 },

    #[error("path left the reals at t = {t} (delta = {delta})")]
    NonFinite { t: f64, delta: f64 },

    #[error("{failed} of {total} samples failed; first failure: {first}")]
    SamplesFailed {
        failed: usize,
        total: usize,
        first: Box<Error>,
    },

    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),

    #[error("level {level} is degenerate: mean absolute difference is {mean}")]
    DegenerateLevel { level: usize, mean: f64 },

    #[error("quadrature on [{a}, {b}] did not reach tolerance {tolerance} (estimate {estimate})")]
    QuadratureTolerance {
        a: f64,
        b: f64,
        tolerance: f64,
        estimate: f64,
    },

    #[error("diffusion not bounded away from zero: min sigma = {min_sigma} at x = {at}")]
    PositivityViolation { min_sigma: f64, at: f64 },

    #[error("sign search failed: {0}")]
    SignSearch(String),
}
