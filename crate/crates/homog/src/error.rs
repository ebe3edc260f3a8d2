use thiserror::Error;

/// Errors produced by grid, operator and solver construction or evaluation.
#[derive(Debug, Error)]
pub enum HomogError {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("material error: {0}")]
    Material(String),

    #[error("projection operator error: {0}")]
    Projection(String),

    #[error("krylov solver error: {0}")]
    Krylov(String),

    #[error("nonlinear solver error: {0}")]
    Solver(String),

    #[error("microstructure generation error: {0}")]
    Microstructure(String),

    #[error("load program error: {0}")]
    LoadProgram(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HomogError>;
