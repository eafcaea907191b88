use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("covariate layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("singular design in component {component} at grid index {grid_index}")]
    SingularDesign { component: usize, grid_index: usize },

    #[error("insufficient data in component {component}: {rows} rows for {cols} coefficients")]
    InsufficientData {
        component: usize,
        rows: usize,
        cols: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("need at least {needed} residual curves, got {got}")]
    TooFewResiduals { needed: usize, got: usize },

    #[error("order statistic index {index} out of range 1..={len}")]
    IndexOutOfRange { index: i64, len: usize },

    #[error("modulation numerator vanishes everywhere")]
    PathologicalModulation,

    #[error("significance level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("smoothing parameter tau {0} outside [0, 1]")]
    InvalidTau(f64),

    #[error("alpha {alpha} >= {upper}: the smoothed band is empty")]
    EmptyBand { alpha: f64, upper: f64 },

    #[error("band is unbounded (alpha below the 1/(l+1) feasibility bound)")]
    UnboundedBand,

    #[error("modulation does not integrate to one: band size {expected} vs quadrature {got}")]
    NormalizationMismatch { expected: f64, got: f64 },

    #[error("point {0} outside the spline domain")]
    OutsideDomain(f64),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid study configuration: {0}")]
    InvalidStudy(String),

    #[error("replication {index}: {source}")]
    Replication { index: usize, source: Box<Error> },
}
