use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("alphabet size must be at least 2, got {0}")]
    AlphabetTooSmall(usize),

    #[error("symbol {symbol} out of range for alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: u8, alphabet: usize },

    #[error("alphabet mismatch: {0} vs {1}")]
    AlphabetMismatch(usize, usize),

    #[error("depth {requested} exceeds the configured cap ({max} cells)")]
    DepthCap { requested: usize, max: usize },

    #[error("cannot reconcile depths: function at depth {function} vs data at depth {data}")]
    DepthMismatch { function: usize, data: usize },

    #[error("value array has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("operation requires a binary alphabet (d = 2), got d = {0}")]
    BinaryOnly(usize),

    #[error("{context}: non-positive value {value}")]
    NonPositive { context: &'static str, value: f64 },

    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("measure weights sum to {0}, expected 1 within 1e-12")]
    NotNormalizedMeasure(f64),

    #[error("potential is not normalized: sup|L1 - 1| = {residual}")]
    NotNormalized { residual: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("tangent vectors have different base potentials")]
    BaseMismatch,

    #[error("input has non-zero mean {0} beyond tolerance")]
    NonZeroMean(f64),

    #[error("{0} is not supported: {1}")]
    Unsupported(&'static str, &'static str),

    #[error("chart coordinates out of bounds: |{value}| >= {bound}")]
    ChartBound { value: f64, bound: f64 },

    #[error("chart metric lost positive definiteness at the requested point")]
    ChartDegenerate,

    #[error("domain exit: point ({r}, {s}) left the open square")]
    DomainExit { r: f64, s: f64 },

    #[error("step size underflow: error estimate {estimate} still above {tol} at minimal step")]
    StepUnderflow { estimate: f64, tol: f64 },

    #[error("shooting failed to converge: residual {residual} after {iterations} iterations")]
    ShootingFailed { residual: f64, iterations: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
