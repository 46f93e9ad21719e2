use thiserror::Error;

/// Errors produced by the mapping, planning and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map geometry: {0}")]
    Geometry(String),
    #[error("cell ({col}, {row}) outside a {cols}x{rows} grid")]
    OutOfBounds {
        col: usize,
        row: usize,
        cols: usize,
        rows: usize,
    },
    #[error("map dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate trajectory segment between waypoints {0} and {1}")]
    DegenerateSegment(usize, usize),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("time {t} outside trajectory range [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
