use thiserror::Error;

/// Errors raised across the grid, simulator, model, and planner layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distribution has no mass (total {0:e})")]
    ZeroMass(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid grid size {width}x{height} (minimum 8x8)")]
    GridTooSmall { width: usize, height: usize },

    #[error("invalid kernel at pixel ({x}, {y}): {reason}")]
    InvalidKernel { x: usize, y: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("file truncated: expected {expected} more bytes")]
    TruncatedFile { expected: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("flow radius {radius} too small for displacement ({dx}, {dy}) at pixel ({x}, {y})")]
    RadiusTooSmall {
        radius: usize,
        x: usize,
        y: usize,
        dx: i64,
        dy: i64,
    },

    #[error("could not place scene after {0} attempts")]
    PlacementFailure(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("no goal set")]
    NoGoal,

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
