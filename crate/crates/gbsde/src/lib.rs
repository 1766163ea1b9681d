//! Numerical laboratory for doubly mean-reflected quadratic G-BSDEs.
//!
//! The crate composes four layers:
//!
//! * [`engine`] evaluates (conditional) G-expectations of terminal payoffs by
//!   solving the fully nonlinear G-heat equation on a grid, with an exhaustive
//!   volatility-scenario tree ([`tree`]) as an independent oracle.
//! * [`solver`] solves standard (unreflected) quadratic G-BSDEs with Markovian
//!   terminal data by backward dynamic programming, recovering Y, Z and the
//!   non-increasing G-martingale K, plus truncation machinery for unbounded
//!   data.
//! * [`skorokhod`] solves the Skorokhod problem and its backward variant with
//!   two nonlinear time-dependent reflecting boundaries, and evaluates
//!   stability bounds as certificates.
//! * [`reflection`] composes the above into solvers for G-BSDEs whose mean is
//!   constrained between two loss-function boundaries, with full certificate
//!   checking; [`bmo`] provides the BMO-norm, exponential-martingale and
//!   reverse-Holder diagnostics used as certificates.
//!
//! Batch runs are driven by TOML configs through [`harness`]; see the
//! `examples/` directory for one runnable program per capability.

pub mod band;
pub mod bmo;
pub mod config;
pub mod engine;
pub mod error;
pub mod grid;
pub mod harness;
pub mod payoff;
pub mod reflection;
pub mod skorokhod;
pub mod solver;
pub mod timefn;
pub mod tree;

pub use band::VolatilityBand;
pub use error::{Error, Result};
pub use grid::GridSpec;
pub use payoff::{GrowthTag, Payoff};
