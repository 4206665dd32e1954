use thiserror::Error;

/// Errors raised by carpet construction, solvers and file handling.
#[derive(Debug, Error)]
pub enum CarpetError {
    /// The input is not a well-formed piling pattern (dimensions, side count).
    #[error("malformed pattern: {0}")]
    Structural(String),

    /// The pattern is well formed but violates one of the admissibility conditions.
    #[error("inadmissible pattern: {0}")]
    Inadmissible(String),

    #[error("unknown builtin pattern `{name}` (available: {available})")]
    UnknownPattern { name: String, available: String },

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("symmetry error: {0}")]
    Symmetry(String),

    #[error("cell budget exceeded: {cells} cells requested, budget is {budget}")]
    Budget { cells: u128, budget: u64 },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("solver did not converge: relative residual {residual:e} after {iterations} iterations (tolerance {tol:e})")]
    SolverFailure {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("degenerate pencil: {0}")]
    DegeneratePencil(String),

    #[error("insufficient levels: need at least {needed}, have {have}")]
    InsufficientLevels { needed: usize, have: usize },

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CarpetError {
    /// True for errors originating in a linear solve.
    pub fn is_solver_error(&self) -> bool {
        matches!(
            self,
            CarpetError::SolverFailure { .. } | CarpetError::SingularSystem(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CarpetError>;
