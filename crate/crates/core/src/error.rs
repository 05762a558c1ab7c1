use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("density at node {node} is not positive definite (min eigenvalue {min_eigenvalue})")]
    DensityNotPositive { node: usize, min_eigenvalue: f64 },
    #[error("concatenation mismatch: {0}")]
    Concatenation(String),

    #[error("empty gamma grid")]
    EmptyGammaGrid,
    #[error("gamma grid point {gamma} lies outside the domain of H")]
    GammaOutsideDomain { gamma: f64 },
    #[error("conjugate infinite: a = {a} is outside the domain of F")]
    ConjugateInfinite { a: f64 },
    #[error("no epsilon-maximizer found on a grid of {points} points")]
    NoMaximizer { points: usize },
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("invalid control class: {0}")]
    InvalidControlClass(String),
    #[error("CFL violated: a_max*dt/dx^2 = {ratio} > 1; max admissible dt = {max_dt}")]
    Cfl { ratio: f64, max_dt: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("enumeration cap exceeded: {count} controls > cap {cap}")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("control a = {a} at layer {layer} node {node} is outside the domain of F")]
    ControlOutsideDomain { a: f64, layer: usize, node: usize },
    #[error("Picard iteration not contractive: dt*L = {ratio} >= 1; use a smaller dt")]
    PicardNonContraction { ratio: f64 },
    #[error("Picard iteration did not converge at layer {layer} node {node}")]
    PicardDiverged { layer: usize, node: usize },
    #[error("regression needs at least {needed} paths, got {got}")]
    TooFewPaths { needed: usize, got: usize },
    #[error("no admissible control left after filtering A0 against the domain of F")]
    EmptyAdmissibleSet,
    #[error("unbounded domain of F: an explicit a_max is required")]
    UnboundedDomain,

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
