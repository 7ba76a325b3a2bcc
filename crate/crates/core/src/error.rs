use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("set-point {z} outside [0, {max}]")]
    InvalidSetPoint { z: f64, max: f64 },
    #[error("singular stationary system: {0}")]
    SingularSystem(String),
    #[error("set-points must be sorted ascending")]
    UnsortedInput,
    #[error("not a threshold distribution: {0}")]
    NotADistribution(String),
    #[error("fixed-point iteration did not converge after {iterations} iterations (bracket {bracket:e})")]
    NoConvergence { iterations: usize, bracket: f64 },
    #[error("occupation statistics were not recorded")]
    MissingOccupation,
    #[error("no coalescence after horizon {horizon}")]
    NoCoalescence { horizon: f64 },
    #[error("no samples")]
    EmptySamples,
    #[error("explicit scheme unstable: time step {time_step} exceeds bound {bound}")]
    UnstableScheme { time_step: f64, bound: f64 },
}

impl Error {
    /// Short variant name, used for CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveRate(_) => "NonPositiveRate",
            Error::InvalidParams(_) => "InvalidParams",
            Error::InvalidSetPoint { .. } => "InvalidSetPoint",
            Error::SingularSystem(_) => "SingularSystem",
            Error::UnsortedInput => "UnsortedInput",
            Error::NotADistribution(_) => "NotADistribution",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::MissingOccupation => "MissingOccupation",
            Error::NoCoalescence { .. } => "NoCoalescence",
            Error::EmptySamples => "EmptySamples",
            Error::UnstableScheme { .. } => "UnstableScheme",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
