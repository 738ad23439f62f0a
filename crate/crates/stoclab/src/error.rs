use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular matrix: eigenvalue #{index} = {value:e} is below the floor {floor:e}")]
    Singular { index: usize, value: f64, floor: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("training diverged at step {step} (loss {loss:e}); try a smaller learning rate")]
    Diverged { step: usize, loss: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("non-finite value at iterate {iter}: {dump}")]
    NonFinite { iter: usize, dump: String },

    #[error("undefined classifier: both components are zero")]
    UndefinedClassifier,

    #[error("cross-check failed: {0}")]
    CrossCheck(String),
}

pub type Result<T> = std::result::Result<T, Error>;
