use thiserror::Error;

pub type Result<T> = std::result::Result<T, ClvfError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClvfError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("control component {index} = {value} lies outside [{lo}, {hi}]")]
    ControlOutOfBox {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid system definition: {0}")]
    InvalidSystem(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// Subsystem `subsystem` has a derivative row that reacts to a variable it does not own.
    #[error(
        "subsystem {subsystem} is not self-contained: derivative of state {state_row} \
         changes when {kind} {perturbed} is perturbed"
    )]
    SelfContainmentViolation {
        subsystem: usize,
        state_row: usize,
        kind: &'static str,
        perturbed: usize,
    },

    #[error("shared control {index} disagrees between subsystems ({first} vs {second})")]
    ControlConflict {
        index: usize,
        first: f64,
        second: f64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("coordinate {dim} = {value} lies outside the grid range [{lo}, {hi}]")]
    OutOfBounds {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("grids do not match")]
    GridMismatch,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("time step {dt} exceeds the CFL limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("state lies outside the region of exponential stabilizability")]
    OutsideRoes,

    #[error("subsystem has no shared controls")]
    NoSharedControls,

    #[error("QP is infeasible: min over the box of a.u is {min_value} > {offset}")]
    Infeasible { min_value: f64, offset: f64 },

    #[error("missing snapshot history: {0}")]
    MissingHistory(String),

    #[error("trajectory needs at least two finite samples, got {0}")]
    ShortTrajectory(usize),

    #[error("malformed value file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ClvfError {
    fn from(e: std::io::Error) -> Self {
        ClvfError::Io(e.to_string())
    }
}
