use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("state space has {0} states, at least 2 are required")]
    StateSpaceTooSmall(usize),

    #[error("state space has {size} states, exceeding the cap of {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },

    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not a point of the simplex: {0}")]
    NotOnSimplex(String),

    #[error("tangent vector components sum to {0:e}, expected 0")]
    NotTangent(f64),

    #[error("dual vector entry {value} exceeds the admissible magnitude {limit}")]
    DualOutOfRange { value: f64, limit: f64 },

    #[error("point is not interior: y[{index}] = {value:e}")]
    NotInterior { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ODE integration diverged at t = {time}: |y| = {value}")]
    Divergence { time: f64, value: f64 },

    #[error("Legendre transform did not converge after {iterations} iterations (best lower bound {best_value}, gradient norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        best_value: f64,
        grad_norm: f64,
    },

    #[error("path action did not converge on segment {segment} (partial action {partial})")]
    ActionNonConvergence { segment: usize, partial: f64 },

    #[error("point is singular for this rho: {0}")]
    Singular(String),

    #[error("equilibrium set has {0} elements; the in-tree enumeration supports at most 8")]
    TooManyEquilibria(usize),

    #[error("domain does not contain the equilibrium")]
    DomainExcludesEquilibrium,

    #[error("negative transition rate {rate:e} for {event} in state {state:?}")]
    NegativeRate { rate: f64, event: String, state: Vec<u64> },
}

pub type Result<T> = std::result::Result<T, Error>;
