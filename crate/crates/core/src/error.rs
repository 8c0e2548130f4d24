use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("range violation: boundary value {value} at sample {index} lies outside (-1+{margin}, -{margin})")]
    RangeViolation { index: usize, value: f64, margin: f64 },

    #[error("conjugacy violation: coefficient at k={k:?} is not the conjugate of the one at -k (mismatch {mismatch:e})")]
    ConjugacyViolation { k: [i64; 2], mismatch: f64 },

    #[error("spectrum not resolved: {0}")]
    Unresolved(String),

    #[error("degenerate terrain map: layer depth {depth:e} below 1e-6")]
    DegenerateMap { depth: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature guard: evaluation height {height} below {guard}")]
    QuadratureGuard { height: f64, guard: f64 },

    #[error("support error: boundary datum does not vanish on the grid border (max border value {0:e})")]
    Support(f64),

    #[error("solver diverged after {iterations} iterations (relative residual {residual:e}, target {target:e})")]
    SolverDiverged { iterations: usize, residual: f64, target: f64 },

    #[error("Picard iteration diverged after {iterations} iterations; relative-change history {history:?}")]
    PicardDiverged { iterations: usize, history: Vec<f64> },

    #[error("point outside the domain: {0}")]
    OutOfDomain(String),

    #[error("singular fit: Gram matrix determinant {det:e} relative to scale {scale:e}")]
    SingularFit { det: f64, scale: f64 },

    #[error("degenerate box: r - rho = {gap} is below two grid cells ({cells})")]
    DegenerateBox { gap: f64, cells: f64 },

    #[error("non-positive data at index {0} in a log-log fit")]
    NonPositiveData(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
