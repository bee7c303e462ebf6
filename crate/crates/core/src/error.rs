use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no coexistence equilibrium: m = {m} is not below the maturity ceiling {ceiling}")]
    NoCoexistence { m: f64, ceiling: f64 },

    #[error("equilibrium does not exist: total biomass {n_total} is not above threshold {threshold}")]
    NotExist { n_total: f64, threshold: f64 },

    #[error("the limit point e0 is not an equilibrium of the delay equations")]
    LimitPoint,

    #[error("growth rate R(P) = {rate:e} fell below the floor at P = {p:e}")]
    SingularRate { p: f64, rate: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (|F| = {residual:e})")]
    NoConverge { iterations: usize, residual: f64 },

    #[error("rightmost real part does not change sign over the bracket [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("Newton polish of the boundary point failed: {0}")]
    NewtonFail(String),

    #[error("insufficient history: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("initial nutrient N(0) = {n0:e} is not positive; history holds more biomass than N_T")]
    InfeasibleBiomass { n0: f64 },

    #[error("invalid history: {0}")]
    InvalidHistory(String),

    #[error("(t = {t}, s = {s}) lies outside the region covered by the trajectory")]
    OutOfRegion { t: f64, s: f64 },

    #[error("threshold condition could not be bracketed: {0}")]
    ThresholdBracket(String),

    #[error("start point residual {residual:e} exceeds tolerance {tolerance:e}")]
    StartResidual { residual: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
