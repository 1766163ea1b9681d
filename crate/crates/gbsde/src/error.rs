//! Error type shared by all solvers.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid volatility band: {0}")]
    Band(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("CFL violation: sigma_high_sq * dt / dx^2 = {ratio} exceeds {limit}")]
    Cfl { ratio: f64, limit: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("numerical blow-up during backward sweep at step {step}")]
    BlowUp { step: usize },

    #[error("stability guard tripped at step {step}: dt*L2*(1+2*max|z|) = {value} > {limit}")]
    StabilityGuard { step: usize, value: f64, limit: f64 },

    #[error("enumeration cost guard: {0}")]
    CostGuard(String),

    #[error("band ratio undefined: sigma_low_sq = 0")]
    UndefinedBandRatio,

    #[error("invalid boundary pair: {0}")]
    Boundary(String),

    #[error("invalid input path: {0}")]
    Path(String),

    #[error("root bracketing failed: {0}")]
    RootBracket(String),

    #[error("inadmissible terminal anchor: {0}")]
    Anchor(String),

    #[error("invalid loss pair: {0}")]
    Loss(String),

    #[error("invalid generator: {0}")]
    Generator(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shift lattice too narrow: {0}")]
    LatticeEscape(String),

    #[error("fixed-point iteration failed to contract: {0}")]
    NonContraction(String),

    #[error("truncation gap sequence not decreasing: {0}")]
    GapsNotDecreasing(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
