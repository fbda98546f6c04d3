use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("wavelet index (l={level}, r={index}) out of range for d={dimension}")]
    IndexOutOfRange {
        level: u32,
        index: usize,
        dimension: u32,
    },
    #[error("point {0:?} lies outside the unit cube")]
    PointOutsideDomain([f64; 2]),
    #[error("tree reaches level {max_level} but grid level {grid_level} only resolves levels up to {}", grid_level - 1)]
    Resolution { max_level: u32, grid_level: u32 },
    #[error("dimension mismatch: expected d={expected}, found d={found}")]
    DimensionMismatch { expected: u32, found: u32 },
    #[error("grid mismatch: functions live on different dyadic grids")]
    GridMismatch,
    #[error("link inverse undefined at {value} (range is ({floor}, inf))")]
    LinkDomain { value: f64, floor: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("hyper-prior support is empty: log n = {log_n} does not exceed d = {d}")]
    EmptySupport { log_n: f64, d: u32 },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("rate fit is degenerate: {0}")]
    DegenerateFit(&'static str),
}
