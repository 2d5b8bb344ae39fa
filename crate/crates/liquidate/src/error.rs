use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameters: {0:?}")]
    Invalid(Vec<String>),
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("penalization level n = {n} below the admissible bound {bound} ({context})")]
    PenalizationTooSmall { n: f64, bound: f64, context: String },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("solution lost positive semidefiniteness at t = {t}: min eigenvalue {min_eig}")]
    PsdViolation { t: f64, min_eig: f64 },
    #[error("evaluation time {t} outside solution range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("monotonicity violation in the penalization ladder at t = {t}: min eigenvalue {min_eig}")]
    MonotonicityViolation { t: f64, min_eig: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
