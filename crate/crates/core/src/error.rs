use crate::grid::ElementRect;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("rectangle {rect} is outside the {gx}x{gy} element grid")]
    OutOfBounds { rect: ElementRect, gx: usize, gy: usize },

    #[error("cannot cut {rect} along {axis}: fewer than two elements")]
    DegenerateCut { rect: ElementRect, axis: crate::grid::Axis },

    #[error("{ranks} ranks requested but the grid only has {elements} elements")]
    TooManyRanks { ranks: usize, elements: usize },

    #[error("recursive coordinate bisection needs a power-of-two rank count, got {0}; use URB for arbitrary counts")]
    NotPowerOfTwo(usize),

    #[error("cannot give {ranks} ranks a non-empty share of {rect}")]
    Infeasible { ranks: usize, rect: ElementRect },

    #[error("grid extents differ: expected {expected:?}, found {found:?}")]
    ExtentMismatch { expected: (usize, usize), found: (usize, usize) },

    #[error("two-stream setup needs an even particle count, got {0}")]
    OddParticleCount(usize),

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("partition map format: {0}")]
    MapFormat(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }
}
