use thiserror::Error;

/// Errors raised anywhere in the estimation stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate atom location {0}")]
    DuplicateAtom(f64),

    #[error("atom weight must be positive and finite, got {0}")]
    NonPositiveWeight(f64),

    #[error("atom location {location} lies outside the interval [{a}, {b}]")]
    AtomOutsideInterval { location: f64, a: f64, b: f64 },

    #[error("atom location {0} coincides with a quadrature node")]
    AtomOnGridNode(f64),

    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),

    #[error("grid size must be at least {min}, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("a reference measure needs at least one atom or a continuous part")]
    EmptyMeasure,

    #[error("value sequence has length {got}, measure expects {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("elements live on different reference measures")]
    MeasureMismatch,

    #[error("density value at index {index} is not strictly positive and finite ({value})")]
    NonPositiveDensity { index: usize, value: f64 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("operation requires a {0} reference measure")]
    WrongMeasureKind(&'static str),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),

    #[error("target degrees of freedom {target} outside attainable range [{min}, {max}]")]
    DfOutOfRange { target: f64, min: f64, max: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
