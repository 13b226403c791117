use thiserror::Error;

/// Errors raised by meshing, assembly and the network solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("kernel singularity between basis {m} and basis {n}: segments {distance:.3e} wavelengths apart")]
    KernelSingularity { m: usize, n: usize, distance: f64 },

    #[error("singular matrix in {context} (estimated condition number {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
