use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// `rho * sigma_x2 - q_d * q_x` (plus `tau`) reached zero. The iterate is
    /// heading for the success corner and has to be handled analytically.
    #[error("update denominator vanishes at (q_d, q_x) = ({q_d}, {q_x})")]
    DenominatorVanishes { q_d: f64, q_x: f64 },

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("success branch absent (g = {g})")]
    SuccessBranchAbsent { g: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Unconverged { iterations: usize, residual: f64 },

    #[error("numerical integration failed: {0}")]
    IntegrationFailed(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("malformed record: {0}")]
    Malformed(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}
