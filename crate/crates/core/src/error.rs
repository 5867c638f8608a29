use thiserror::Error;

/// Errors raised across the library.
///
/// Parse errors carry the 1-based line number of the offending input line.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("invalid region: {0}")]
    Region(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid forecast: {0}")]
    Forecast(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate window [{t0}, {t1})")]
    DegenerateWindow { t0: f64, t1: f64 },

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("intensity {value} exceeds bound {bound} at lon={lon}, lat={lat}, t={time}")]
    BoundViolation {
        lon: f64,
        lat: f64,
        time: f64,
        value: f64,
        bound: f64,
    },

    #[error("supercritical triggering: branching ratio {0} >= 1")]
    Supercritical(f64),

    #[error("expected cascade size {expected} exceeds cap {cap}")]
    CascadeCap { expected: f64, cap: f64 },

    #[error("log-likelihood is not finite at the starting point")]
    NonFiniteStart,

    #[error("zero intensity at event {index} (lon={lon}, lat={lat}, t={time})")]
    ZeroIntensity {
        index: usize,
        lon: f64,
        lat: f64,
        time: f64,
    },

    #[error("geometry: {0}")]
    Geometry(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
