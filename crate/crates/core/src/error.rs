use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("uniform value {0} outside [0, 1]")]
    UniformOutOfRange(f64),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("rows are not aligned: {0}")]
    Misaligned(String),

    #[error("cluster of depth {depth} from column {origin} touches the boundary of a width-{width} window")]
    BoundaryContact { origin: i64, depth: usize, width: usize },

    #[error("exact computation at depth {n} exceeds the supported maximum {max}")]
    StateSpaceTooLarge { n: usize, max: usize },

    #[error("bisection bracket not established: {0}")]
    BracketFailure(String),

    #[error("fresh label space exhausted at row {row}, column {col}")]
    LabelOverflow { row: i64, col: i64 },

    #[error("value {value} outside {what}")]
    OutOfRange { what: String, value: i64 },

    #[error("palette has {have} colors but {need} are required")]
    PaletteTooSmall { have: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
