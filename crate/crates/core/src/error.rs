use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("{0} did not converge")]
    NotConverged(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("invalid game: {0}")]
    Invalid(String),
    #[error("pseudo-gradient is not strongly monotone: lambda_min of symmetric part is {lambda_min:e}")]
    NotMonotone { lambda_min: f64 },
    #[error("decision set is empty: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unsupported problem: {0}")]
    Unsupported(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Error)]
pub enum SimulationError {
    #[error("invalid simulation request: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A step failed; the trajectory up to that step is attached.
    #[error("step {t} failed: {message}")]
    Step {
        t: usize,
        message: String,
        partial: Box<crate::simulator::Trajectory>,
    },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    // The underlying errors are part of the message rather than a source,
    // so chained display does not repeat them.
    #[error("cannot read {path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("malformed scenario JSON: {0}")]
    Json(serde_json::Error),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("unknown builtin scenario '{name}' (available: {})", .options.join(", "))]
    UnknownBuiltin { name: String, options: Vec<String> },
    #[error(transparent)]
    Game(#[from] GameError),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Json(e)
    }
}
