use thiserror::Error;

/// Errors produced by problem construction, lattice building and the solvers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("volatility evaluator returned a negative value ({value}) at t = {t}")]
    NegativeVolatility { t: f64, value: f64 },

    #[error(
        "time step too large for the inner contraction: dt = {dt}, requires dt * (lipschitz + r) < 1 with lipschitz + r = {rate}"
    )]
    StepSizeTooLarge { dt: f64, rate: f64 },

    #[error(
        "inner fixed point did not converge at step {step}, node {node} (residual {residual})"
    )]
    InnerIterationDiverged {
        step: usize,
        node: usize,
        residual: f64,
    },

    #[error(
        "oblique projection did not reach a fixed point within {passes} passes at step {step}; \
         this usually signals a switching-cost triangle-inequality violation"
    )]
    ProjectionNoFixedPoint { step: usize, passes: usize },

    #[error("drivers declare cross-mode y dependence; use the fixed-point solver instead")]
    CoupledDriversRejected,

    #[error("problem failed assumption validation: {0}")]
    ValidationFailed(String),

    #[error("Picard iteration did not converge in {iterations} iterations; error trace {trace:?}")]
    FixedPointDidNotConverge { iterations: usize, trace: Vec<f64> },

    #[error("strategy is invalid: {0}")]
    InvalidStrategy(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
