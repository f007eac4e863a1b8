use crate::expr::ExprError;

/// Errors raised by the numerical stages of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("observation function h must depend on x")]
    ConstantObservation,

    #[error("statistic {index} depends on t; sufficient statistics must be time-invariant")]
    TimeDependentStatistic { index: usize },

    #[error("sufficient statistics are not linearly independent (smallest Gram eigenvalue {min_eigenvalue:e})")]
    IndependenceViolation { min_eigenvalue: f64 },

    #[error("cannot determine the growth exponent of statistic {index}")]
    UnknownGrowth { index: usize },

    #[error("parameter vector has length {got}, the family has {expected} statistics")]
    ParameterLength { expected: usize, got: usize },

    #[error("parameters are not in the integrable set ({0})")]
    NotIntegrable(String),

    #[error("quadrature domain reached half-width {half_width} (cap {cap}) before the tail cutoff")]
    DomainGrowthFailure { half_width: f64, cap: f64 },

    #[error("adaptive quadrature did not converge on [{a}, {b}] (estimate {estimate:e}, error {error:e})")]
    QuadratureNotConverged { a: f64, b: f64, estimate: f64, error: f64 },

    #[error("moment order {0} is not supported (expected 1..=4)")]
    MomentOrder(usize),

    #[error("density grid needs at least {min} nodes, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("invalid density grid: {0}")]
    InvalidGrid(String),

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("diffusion coefficient a = {value} is not strictly positive at x = {x}, t = {t}")]
    NonPositiveDiffusion { x: f64, t: f64, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("Euler-Maruyama step {step} blew up (|X| = {value:e} > 1e6); reduce dt")]
    BlowUp { step: usize, value: f64 },

    #[error("particle weights degenerated at step {step}")]
    WeightDegeneracy { step: usize },

    #[error("boundary mass loss at step {step}: fraction {fraction:e} of the mass lies in the boundary cells")]
    BoundaryMassLoss { step: usize, fraction: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
