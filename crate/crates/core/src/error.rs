use std::io;

/// Errors raised by the library. Variants map onto the CLI exit-code classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("packing failed: {0}")]
    Packing(String),
    #[error("grid does not resolve the system: {0}")]
    Resolution(String),
    #[error("unsupported: {0}")]
    Capability(String),
    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: [usize; 3], shape: [usize; 3] },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("overlap policy violated: {0}")]
    Separation(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
