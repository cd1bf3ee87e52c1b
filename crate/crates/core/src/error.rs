use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or parameter lies outside the region where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid construction parameters (grid, shape, kernel, scheme).
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid call arguments (empty inputs, mismatched grids).
    #[error("argument error: {0}")]
    Argument(String),
    /// A reference solution could not be produced.
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
