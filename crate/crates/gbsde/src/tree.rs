//! Exhaustive volatility-scenario trees.
//!
//! The discrete counterpart of the representation of a G-expectation as a
//! supremum of linear expectations: a control picks one of the two band edge
//! volatilities per step, the driving walk moves `+-sigma*sqrt(dt)` with
//! equal probability, and the oracle maximises the expected payoff over every
//! piecewise-constant control. Everything here is exact enumeration at toy
//! scale and serves as the independent check on the PDE engine.

use crate::band::VolatilityBand;
use crate::error::{Error, Result};
use crate::payoff::Payoff;

/// Cost guard for control enumeration (2^n controls).
pub const MAX_ORACLE_STEPS: usize = 16;

/// Max over all `2^n_steps` piecewise-constant two-point volatility controls
/// of the expected payoff of the induced walk at the horizon.
///
/// For a terminal payoff the law of the walk under a control depends only on
/// how many steps use the upper volatility, so equal-count controls share one
/// law; the scan still visits every control.
pub fn scenario_supremum(
    payoff: &Payoff,
    band: &VolatilityBand,
    horizon: f64,
    n_steps: usize,
) -> Result<f64> {
    if n_steps == 0 || n_steps > MAX_ORACLE_STEPS {
        return Err(Error::CostGuard(format!(
            "n_steps = {n_steps} outside 1..={MAX_ORACLE_STEPS}"
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::Grid("horizon must be positive".into()));
    }
    let dt = horizon / n_steps as f64;
    let s_lo = (band.sigma_low_sq * dt).sqrt();
    let s_hi = (band.sigma_high_sq * dt).sqrt();
    let mut by_count: Vec<Option<f64>> = vec![None; n_steps + 1];
    let mut best = f64::NEG_INFINITY;
    for control in 0u64..(1u64 << n_steps) {
        let highs = control.count_ones() as usize;
        let v = match by_count[highs] {
            Some(v) => v,
            None => {
                let v = expected_terminal(payoff, n_steps - highs, highs, s_lo, s_hi);
                by_count[highs] = Some(v);
                v
            }
        };
        best = best.max(v);
    }
    Ok(best)
}

/// Exact expectation of `phi(walk)` when `lows` steps move `+-s_lo` and
/// `highs` steps move `+-s_hi`: product of two binomial laws.
fn expected_terminal(payoff: &Payoff, lows: usize, highs: usize, s_lo: f64, s_hi: f64) -> f64 {
    let wl = binomial_weights(lows);
    let wh = binomial_weights(highs);
    let mut total = 0.0;
    for (i, pi) in wl.iter().enumerate() {
        let xi = (2.0 * i as f64 - lows as f64) * s_lo;
        for (j, pj) in wh.iter().enumerate() {
            let xj = (2.0 * j as f64 - highs as f64) * s_hi;
            total += pi * pj * payoff.eval(xi + xj);
        }
    }
    total
}

fn binomial_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    w[0] = 0.5f64.powi(n as i32);
    for k in 1..=n {
        w[k] = w[k - 1] * (n - k + 1) as f64 / k as f64;
    }
    w
}

/// One enumerated tree scenario: a volatility choice and a sign per step.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// `true` picks the upper band edge on that step.
    pub highs: Vec<bool>,
    /// `true` moves the walk up on that step.
    pub ups: Vec<bool>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.highs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.highs.is_empty()
    }

    pub fn constant(n: usize, high: bool, up: bool) -> Self {
        Self {
            highs: vec![high; n],
            ups: vec![up; n],
        }
    }

    /// Bit `k mod 64` of each mask drives step `k`, so masks act as
    /// repeating patterns for scenarios longer than 64 steps.
    pub fn from_masks(n: usize, high_mask: u64, up_mask: u64) -> Self {
        Self {
            highs: (0..n).map(|k| high_mask >> (k % 64) & 1 == 1).collect(),
            ups: (0..n).map(|k| up_mask >> (k % 64) & 1 == 1).collect(),
        }
    }

    /// Walk positions (length `n + 1`, starting at zero) for a step `dt`.
    pub fn positions(&self, band: &VolatilityBand, dt: f64) -> Vec<f64> {
        let mut xs = Vec::with_capacity(self.len() + 1);
        let mut x = 0.0;
        xs.push(x);
        for k in 0..self.len() {
            x += self.increment(band, dt, k);
            xs.push(x);
        }
        xs
    }

    pub fn vol_sq(&self, band: &VolatilityBand, k: usize) -> f64 {
        if self.highs[k] {
            band.sigma_high_sq
        } else {
            band.sigma_low_sq
        }
    }

    pub fn increment(&self, band: &VolatilityBand, dt: f64, k: usize) -> f64 {
        let s = (self.vol_sq(band, k) * dt).sqrt();
        if self.ups[k] {
            s
        } else {
            -s
        }
    }
}

/// Supremum over adapted two-point volatility controls of
/// `E[ sum_{k=s}^{to-1} inc(k, x_k, vol_sq_k) | x_s ]` for every start level
/// `s < to`, on the recombining lattice
/// `x = i * sigma_low * sqrt(dt) + j * sigma_high * sqrt(dt)`.
///
/// Returns the maximum of `|value|` over all reachable `(s, state)`, which is
/// the martingale residual when the increments are the per-step drift gaps of
/// a recovered K path.
pub fn adapted_residual_max(
    band: &VolatilityBand,
    dt: f64,
    depth: usize,
    inc: &dyn Fn(usize, f64, f64) -> f64,
) -> Result<f64> {
    if depth == 0 || depth > MAX_ORACLE_STEPS {
        return Err(Error::CostGuard(format!(
            "depth = {depth} outside 1..={MAX_ORACLE_STEPS}"
        )));
    }
    let s_lo = (band.sigma_low_sq * dt).sqrt();
    let s_hi = (band.sigma_high_sq * dt).sqrt();
    let side = 2 * depth + 1;
    let idx = |i: i64, j: i64| -> usize {
        ((i + depth as i64) as usize) * side + (j + depth as i64) as usize
    };
    let mut worst: f64 = 0.0;
    for to in 1..=depth {
        // v holds the DP values at the level currently being consumed.
        let mut v = vec![0.0f64; side * side];
        for s in (0..to).rev() {
            let mut nv = vec![0.0f64; side * side];
            let lim = s as i64;
            for i in -lim..=lim {
                for j in -(lim - i.abs())..=(lim - i.abs()) {
                    if (i + j - s as i64) % 2 != 0 {
                        continue;
                    }
                    let x = i as f64 * s_lo + j as f64 * s_hi;
                    let low =
                        inc(s, x, band.sigma_low_sq) + 0.5 * (v[idx(i + 1, j)] + v[idx(i - 1, j)]);
                    let high =
                        inc(s, x, band.sigma_high_sq) + 0.5 * (v[idx(i, j + 1)] + v[idx(i, j - 1)]);
                    let val = low.max(high);
                    nv[idx(i, j)] = val;
                    worst = worst.max(val.abs());
                }
            }
            v = nv;
        }
    }
    Ok(worst)
}
