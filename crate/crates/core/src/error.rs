use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("singular channel: eigenvalue {eigenvalue:e} at index {index} is below the singularity threshold")]
    SingularChannel { index: usize, eigenvalue: f64 },

    #[error("hermitian eigendecomposition failed for realization seeded with {seed:#018x}")]
    Eigendecomposition { seed: u64 },

    #[error("singular resolvent (condition estimate {condition:e})")]
    SingularResolvent { condition: f64 },

    #[error("selection masks overlap or do not select {expected} entries each")]
    InvalidMasks { expected: usize },

    #[error("saddle iterate left the admissible region: Z1[{index}] = {value:e}")]
    InvalidSaddleRegion { index: usize, value: f64 },

    #[error("saddle solve did not converge (residual {residual:e} after {iterations} iterations)")]
    Unconverged { residual: f64, iterations: usize },

    #[error("unsupported profile: {0}")]
    UnsupportedProfile(String),

    #[error("variance {value:e} is negative beyond tolerance; check the finite-difference diagnostics")]
    ConventionError { value: f64 },

    #[error("run aborted: {rejected} of {attempted} realizations were singular (limit 1%)")]
    RejectionRateExceeded { rejected: u64, attempted: u64 },

    #[error("action evaluation returned a non-finite value at {point:?}")]
    NonFiniteAction { point: [f64; 4] },

    #[error("empty sample set")]
    EmptySamples,
}
