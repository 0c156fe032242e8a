use thiserror::Error;

/// Errors raised by estimation, bootstrap and testing routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("weighted design is numerically rank deficient")]
    SingularDesign,

    #[error("solver did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("only {available} observations in the window around t = {t} (need {required})")]
    InsufficientLocalData {
        t: f64,
        available: usize,
        required: usize,
    },

    #[error("time {0} lies outside [0, 1]")]
    OutOfRange(f64),

    #[error("polynomial anchor system is singular")]
    SingularSystem,

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("linear program failed numerically: {0}")]
    LpNumericalFailure(String),

    #[error("no bandwidth candidate produced a valid fit")]
    NoValidBandwidth,
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::OutOfRange(_) => ErrorClass::Config,
            Error::Data(_) | Error::Dimension(_) | Error::InsufficientLocalData { .. } => {
                ErrorClass::Data
            }
            Error::SingularDesign
            | Error::NonConvergence { .. }
            | Error::SingularSystem
            | Error::LpInfeasible
            | Error::LpUnbounded
            | Error::LpNumericalFailure(_)
            | Error::NoValidBandwidth => ErrorClass::Numerical,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Dimension(_) => "dimension",
            Error::SingularDesign => "singular_design",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InsufficientLocalData { .. } => "insufficient_local_data",
            Error::OutOfRange(_) => "out_of_range",
            Error::SingularSystem => "singular_system",
            Error::LpInfeasible => "lp_infeasible",
            Error::LpUnbounded => "lp_unbounded",
            Error::LpNumericalFailure(_) => "lp_numerical_failure",
            Error::NoValidBandwidth => "no_valid_bandwidth",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
