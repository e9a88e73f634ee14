use thiserror::Error;

/// A violated constraint on the game parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("{name} must be finite")]
    NonFinite { name: &'static str },
    #[error("{name} must be positive (got {value})")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be nonnegative (got {value})")]
    Negative { name: &'static str, value: f64 },
    #[error("fixed costs must satisfy c >= c_tilde (got c = {c}, c_tilde = {c_tilde})")]
    FixedCostOrder { c: f64, c_tilde: f64 },
    #[error("proportional costs must satisfy lambda >= lambda_tilde (got lambda = {lambda}, lambda_tilde = {lambda_tilde})")]
    ProportionalCostOrder { lambda: f64, lambda_tilde: f64 },
    #[error("(c, lambda) = (c_tilde, lambda_tilde) is forbidden: interventions would be pure transfers")]
    DegenerateCosts,
    #[error("1 - lambda*rho must be positive (got {value})")]
    DiscountedSlope { value: f64 },
    #[error("{name} has degree {degree}, the maximum supported degree is {max}")]
    DegreeTooHigh {
        name: &'static str,
        degree: usize,
        max: usize,
    },
    #[error("{name} is empty")]
    EmptyPayoff { name: &'static str },
    #[error("f1 must be nondecreasing at +infinity (player 1 prefers high states)")]
    F1Orientation,
    #[error("f2 must be nonincreasing at +infinity (player 2 prefers low states)")]
    F2Orientation,
    #[error("spec is not symmetric-linear (need f1 = x - s1, f2 = s2 - x with s1 < s2)")]
    NotSymmetricLinear,
    #[error("invalid spec JSON: {0}")]
    Json(String),
}

/// Failure of an equilibrium computation or a malformed candidate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("parameters are not finite")]
    NonFiniteParams,
    #[error("order condition violated: need xbar1 < xstar_i < xbar2 (xbar1 = {xbar1}, xstar1 = {xstar1}, xstar2 = {xstar2}, xbar2 = {xbar2})")]
    OrderCondition {
        xbar1: f64,
        xbar2: f64,
        xstar1: f64,
        xstar2: f64,
    },
    #[error("root bracket could not be established after {iterations} shrink steps")]
    BracketExhausted { iterations: usize },
    #[error("no admissible root after {starts} starts (best residual {best_residual:e})")]
    NoAdmissibleRoot { starts: usize, best_residual: f64 },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Monte Carlo failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid strategies: {0}")]
    Strategy(String),
    #[error("non-finite payoff accumulated on path {path} at t = {time} (x = {state})")]
    NonFinite { path: usize, time: f64, state: f64 },
}
