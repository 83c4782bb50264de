use thiserror::Error;

/// Errors produced by the solver, its diagnostics and the experiment driver.
#[derive(Debug, Error)]
pub enum FluxError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid initial condition at node {node} (x = {x}): value {value} {reason}")]
    InvalidInitial {
        node: usize,
        x: f64,
        value: f64,
        reason: &'static str,
    },

    #[error("face index {index} out of range (interior faces 0..{faces})")]
    Index { index: usize, faces: usize },

    #[error("time step {dt:e} exceeds the stability limit {max_dt:e}")]
    Stability { dt: f64, max_dt: f64 },

    #[error("non-finite value at node {node} after update")]
    Divergence { node: usize },

    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    StepFailure { iterations: usize, residual: f64 },

    #[error("step failed at t = {time}: {source}")]
    Step {
        time: f64,
        #[source]
        source: Box<FluxError>,
    },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Csiszar-Kullback constant undefined: both masses are zero")]
    UndefinedConstant,

    #[error("no sign change of the characteristic function in (0, {upper}]")]
    RootNotFound { upper: f64 },

    #[error("iteration did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Runtime,
    Io,
}

impl FluxError {
    pub fn class(&self) -> ErrorClass {
        match self {
            FluxError::InvalidGrid(_)
            | FluxError::Shape { .. }
            | FluxError::InvalidModel(_)
            | FluxError::InvalidInitial { .. }
            | FluxError::Stability { .. }
            | FluxError::Config(_)
            | FluxError::Json(_) => ErrorClass::Config,
            FluxError::Io(_) | FluxError::Csv(_) => ErrorClass::Io,
            FluxError::Step { source, .. } => match source.class() {
                ErrorClass::Io => ErrorClass::Io,
                _ => ErrorClass::Runtime,
            },
            _ => ErrorClass::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, FluxError>;
