use thiserror::Error;

/// Errors raised by the renormalization engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("basis dimension {dim} exceeds the cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },

    #[error("mode index {index} out of range for {modes} modes")]
    InvalidMode { index: usize, modes: usize },

    #[error("dilation scale {requested} does not match the ladder ratio {ladder}")]
    ScaleMismatch { requested: f64, ladder: f64 },

    #[error("{count} basis energies lie within {tol:e} of a projection boundary")]
    BoundaryTie { count: usize, tol: f64 },

    #[error("kernel shells misaligned with the ladder: {0}")]
    MisalignedShells(String),

    #[error("complement block not invertible (condition number {condition:e})")]
    NotInvertible { condition: f64 },

    #[error("spectral parameter outside the polydisc: |T(0)| = {value} > {bound}")]
    OutOfPolydisc { value: f64, bound: f64 },

    #[error("flow truncated at level {level}: leak norm {leak:e} exceeds budget {budget:e}")]
    FlowTruncated {
        level: usize,
        leak: f64,
        budget: f64,
    },

    #[error("no sign change of the level-{level} map on [{lo}, {hi}]")]
    NoBracket { level: usize, lo: f64, hi: f64 },

    #[error("level-{level} map is not monotone on the search interval")]
    NonMonotone { level: usize },

    #[error("root finding did not converge within {evaluations} evaluations")]
    RootNotConverged { evaluations: usize },

    #[error("spectral tower did not converge within {levels} levels (last step {last_step:e})")]
    Diverged { levels: usize, last_step: f64 },

    #[error("dimension {dim} exceeds the dense eigensolver cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("malformed kernel data: {0}")]
    MalformedKernel(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
