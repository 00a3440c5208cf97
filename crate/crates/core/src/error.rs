use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |A - A*| = {deviation:e} exceeds {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("eigensolver did not converge (residual norm {residual:e})")]
    EigenFailed { residual: f64 },

    #[error("exponent overflow: {context} (magnitude {magnitude:e})")]
    Overflow { context: String, magnitude: f64 },

    #[error("singular matrix in log-determinant: smallest singular value {smallest_sv:e}")]
    SingularLogDet { smallest_sv: f64 },

    #[error("log-determinant carries a non-negligible phase {phase:e} for a real-valued quantity")]
    PhaseResidual { phase: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Fock-space cap exceeded: {modes} modes would need a {dim}x{dim} dense matrix (~{mem_mb} MB); cap is {cap} modes")]
    FockCapExceeded {
        modes: usize,
        dim: usize,
        mem_mb: usize,
        cap: usize,
    },

    #[error("commuting-part check failed: ||[H1,H2]|| = {norm:e}; local terms straddle the partition")]
    NonCommutingParts { norm: f64 },

    #[error("determinant ratio non-positive at quadrature node xi = {xi}")]
    NonPositiveDeterminant { xi: f64 },
}
