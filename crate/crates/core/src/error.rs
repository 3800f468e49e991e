use thiserror::Error;

/// Errors raised by the solver components.
#[derive(Debug, Error)]
pub enum SlarError {
    #[error("coordinate {x} lies outside [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("time step undefined: both maximum velocities are zero")]
    ZeroVelocity,

    #[error("index ({row}, {col}) out of range for a {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },

    #[error("non-positive density {value:e} at cell {cell}")]
    NonPositiveDensity { cell: usize, value: f64 },

    #[error("non-positive temperature {value:e} at cell {cell}")]
    NonPositiveTemperature { cell: usize, value: f64 },

    #[error("operation requires a periodic grid")]
    NonPeriodicGrid,

    #[error("zero pivot in incomplete LU at row {row}")]
    ZeroPivot { row: usize },

    #[error("GMRES did not converge after {iterations} iterations (relative residual {residual:e})")]
    GmresNotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown scenario or problem `{0}`")]
    UnknownScenario(String),

    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("need at least {needed} peaks, found {found}")]
    InsufficientPeaks { needed: usize, found: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SlarError>;

impl SlarError {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        SlarError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
