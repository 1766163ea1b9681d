//! Sublinear-expectation engine: explicit monotone finite differences for the
//! fully nonlinear equation `d_t u + G(d_xx u) = 0` solved backward from a
//! terminal payoff. The value `u(t, x)` approximates the conditional
//! G-expectation of the payoff given the state `x` at time `t`.

use crate::band::VolatilityBand;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::payoff::{GrowthTag, Payoff};

/// `G(a) = (sigma_high_sq * a^+ - sigma_low_sq * a^-) / 2`. Positively
/// homogeneous and monotone in `a`.
pub fn g_eval(a: f64, band: &VolatilityBand) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite(format!("g_eval argument {a}")));
    }
    Ok(g_raw(a, band))
}

#[inline]
pub(crate) fn g_raw(a: f64, band: &VolatilityBand) -> f64 {
    if a >= 0.0 {
        0.5 * band.sigma_high_sq * a
    } else {
        0.5 * band.sigma_low_sq * a
    }
}

/// Grid-valued function `u(t, x)`; slice 0 is `t_start`, slice `n_time` is
/// the terminal payoff sampled exactly.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub grid: GridSpec,
    pub band: VolatilityBand,
    values: Vec<Vec<f64>>,
}

impl FieldSolution {
    pub(crate) fn from_values(grid: GridSpec, band: VolatilityBand, values: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(values.len(), grid.n_time + 1);
        Self { grid, band, values }
    }

    pub fn slice(&self, time_idx: usize) -> &[f64] {
        &self.values[time_idx]
    }

    pub fn terminal_slice(&self) -> &[f64] {
        self.slice(self.grid.n_time)
    }

    /// Linear interpolation in space on a fixed time slice; clamps to the
    /// edge segments outside the domain (consistent with the frozen linear
    /// extension used at the boundary).
    pub fn value_at(&self, time_idx: usize, x: f64) -> f64 {
        interp_row(&self.values[time_idx], &self.grid, x)
    }

    /// Value at the root node `(t_start, 0)`.
    pub fn at_origin(&self) -> f64 {
        self.value_at(0, 0.0)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|row| row.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// Payoff view of a time slice (piecewise-linear interpolant).
    pub fn slice_payoff(&self, time_idx: usize, growth: GrowthTag) -> Result<Payoff> {
        Payoff::from_samples(&self.grid.xs(), &self.values[time_idx], growth)
    }
}

/// Three-point Lagrange interpolation around the nearest interior node;
/// second-order bias-free, for diagnostics that difference field reads (not
/// monotone, so never used inside the schemes themselves).
pub(crate) fn interp_row_quadratic(row: &[f64], grid: &GridSpec, x: f64) -> f64 {
    let dx = grid.dx();
    let n = row.len();
    let pos = (x - grid.x_min) / dx;
    if pos <= 1.0 || pos >= (n - 2) as f64 {
        return interp_row(row, grid, x);
    }
    let i = (pos.round() as usize).clamp(1, n - 2);
    let s = pos - i as f64; // in [-1/2, 1/2]
    let (a, b, c) = (row[i - 1], row[i], row[i + 1]);
    b + 0.5 * s * (c - a) + 0.5 * s * s * (c - 2.0 * b + a)
}

pub(crate) fn interp_row(row: &[f64], grid: &GridSpec, x: f64) -> f64 {
    let dx = grid.dx();
    let pos = (x - grid.x_min) / dx;
    if pos <= 0.0 {
        return row[0] + (row[1] - row[0]) * pos;
    }
    let last = row.len() - 1;
    if pos >= last as f64 {
        return row[last] + (row[last] - row[last - 1]) * (pos - last as f64);
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    row[i] + (row[i + 1] - row[i]) * w
}

/// Backward sweep of `d_t u + G(d_xx u) = 0` from the terminal slice.
/// Dirichlet boundary values are frozen at the payoff's samples, which is
/// exact for payoffs that are asymptotically linear.
pub fn solve_g_heat(
    payoff: &Payoff,
    band: &VolatilityBand,
    grid: &GridSpec,
) -> Result<FieldSolution> {
    grid.validate(band)?;
    let xs = grid.xs();
    let terminal = payoff.sample(&xs);
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("terminal payoff on the grid".into()));
    }
    let n_time = grid.n_time;
    let mut values = vec![Vec::new(); n_time + 1];
    values[n_time] = terminal;
    let dt = grid.dt();
    let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    for n in (0..n_time).rev() {
        let prev = &values[n + 1];
        let mut row = prev.clone();
        for i in 1..row.len() - 1 {
            let a = (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) * inv_dx2;
            row[i] = prev[i] + dt * g_raw(a, band);
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: n });
        }
        values[n] = row;
    }
    Ok(FieldSolution::from_values(*grid, *band, values))
}

/// G-expectation of the payoff at the root `(t_start, x = 0)`.
pub fn g_expectation(payoff: &Payoff, band: &VolatilityBand, grid: &GridSpec) -> Result<f64> {
    Ok(solve_g_heat(payoff, band, grid)?.at_origin())
}

/// Rolling two-row sweep used where only the root value is needed: takes a
/// sampled slice living at time index `steps` of a grid with step `dt` and
/// spacing `dx`, sweeps back to time zero, and returns the value at
/// `origin_idx`. This is the workhorse behind mean paths and constraint
/// tables, where thousands of such solves are run.
pub fn expectation_from_slice(
    slice: &[f64],
    band: &VolatilityBand,
    dt: f64,
    dx: f64,
    steps: usize,
    origin_idx: usize,
) -> Result<f64> {
    if slice.len() < 3 || origin_idx >= slice.len() {
        return Err(Error::Grid("slice too short for a sweep".into()));
    }
    let ratio = band.sigma_high_sq * dt / (dx * dx);
    if ratio > crate::grid::CFL_LIMIT + 1e-12 {
        return Err(Error::Cfl {
            ratio,
            limit: crate::grid::CFL_LIMIT,
        });
    }
    let inv_dx2 = 1.0 / (dx * dx);
    let mut cur = slice.to_vec();
    let mut next = cur.clone();
    for step in 0..steps {
        for i in 1..cur.len() - 1 {
            let a = (cur[i + 1] - 2.0 * cur[i] + cur[i - 1]) * inv_dx2;
            next[i] = cur[i] + dt * g_raw(a, band);
        }
        next[0] = cur[0];
        let last = cur.len() - 1;
        next[last] = cur[last];
        if !next[origin_idx].is_finite() {
            return Err(Error::BlowUp { step });
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur[origin_idx])
}
