use thiserror::Error;

/// Errors raised by the simulation and verification engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty measure")]
    EmptyMeasure,

    #[error("non-finite value {value} in {context}")]
    NonFinite { context: &'static str, value: f64 },

    #[error("size mismatch: {left} vs {right} samples")]
    SizeMismatch { left: usize, right: usize },

    #[error("invalid variance {0} (must be finite and >= 0)")]
    InvalidVariance(f64),

    #[error("negative variance {0} beyond round-off")]
    NegativeVariance(f64),

    #[error("statistics vector has length {got}, model expects {expected}")]
    StatsLength { expected: usize, got: usize },

    #[error("diffusion sign violation: sigma evaluated to {0}")]
    DiffusionSign(f64),

    #[error("time {t} outside grid horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length {len} not divisible by coarsening ratio {ratio}")]
    Divisibility { len: usize, ratio: usize },

    #[error("exact law unavailable for model `{0}` (not in the affine-Gaussian class)")]
    ExactLawUnavailable(String),

    #[error("particle blow-up at step {step}, particle {particle}: position {value}")]
    BlowUp { step: usize, particle: usize, value: f64 },

    #[error("statistic {0} has no closed form on this measure")]
    UnsupportedStatistic(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("expression references {0}, which is not available here")]
    UnboundVariable(String),

    #[error("invalid simulation plan: {0}")]
    InvalidPlan(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("underdetermined fit: need {needed} distinct levels, got {got}")]
    Underdetermined { needed: usize, got: usize },

    #[error("exact scheme: zero error at n = {0}")]
    ExactScheme(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
