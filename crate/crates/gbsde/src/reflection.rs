//! Doubly mean-reflected quadratic G-BSDE solvers.
//!
//! The equation couples an unreflected quadratic G-BSDE with a deterministic
//! bounded-variation process `A = A^R - A^L` that keeps the sublinear mean of
//! the solution between two loss-function boundaries:
//! `E[L(t, Y_t)] <= 0 <= E[R(t, Y_t)]`, with `A^R`/`A^L` moving only while
//! their constraint is tight. The construction used throughout: solve the
//! unreflected equation with the generator's y-argument frozen, build the
//! deterministic constraint functions by pushing the loss boundaries through
//! the engine, solve a backward Skorokhod problem by time reversal for `A`,
//! and shift. A fixed-point loop over the frozen argument handles the general
//! y-dependent generator on sub-intervals short enough for the map to
//! contract, and a truncation ladder extends the solver to unbounded data.

use serde::{Deserialize, Serialize};

use crate::band::VolatilityBand;
use crate::engine::{expectation_from_slice, FieldSolution};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::payoff::Payoff;
use crate::skorokhod::{assemble_reversed, sp_core, SkorokhodSolution};
use crate::solver::{
    k_residual_from_field, solve_gbsde, solve_gbsde_frozen, truncate, GBSDESolution, GeneratorSpec,
    TruncationLevel,
};
use crate::timefn::LinearFn;
use crate::tree::Scenario;

/// Loss-function pair from the parametric family
/// `L(t,y) = kappa1*y + kappa2*atan(y) - offset_l(t)` and
/// `R(t,y) = kappa1*y + kappa2*atan(y) - offset_r(t)`.
/// Sharing the slopes makes the separation `R - L = offset_l - offset_r`
/// uniform in `y`, so the gap assumption can hold on the whole line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(default = "default_kappa1")]
    pub kappa1: f64,
    #[serde(default)]
    pub kappa2: f64,
    pub offset_l: LinearFn,
    pub offset_r: LinearFn,
}

fn default_kappa1() -> f64 {
    1.0
}

impl LossSpec {
    pub fn affine(offset_l: LinearFn, offset_r: LinearFn) -> Self {
        Self {
            kappa1: 1.0,
            kappa2: 0.0,
            offset_l,
            offset_r,
        }
    }

    pub fn eval_l(&self, t: f64, y: f64) -> f64 {
        self.kappa1 * y + self.kappa2 * y.atan() - self.offset_l.value(t)
    }

    pub fn eval_r(&self, t: f64, y: f64) -> f64 {
        self.kappa1 * y + self.kappa2 * y.atan() - self.offset_r.value(t)
    }

    /// Lower bi-Lipschitz constant `c`.
    pub fn c_lo(&self) -> f64 {
        self.kappa1
    }

    /// Upper bi-Lipschitz constant `C`.
    pub fn c_hi(&self) -> f64 {
        self.kappa1 + self.kappa2
    }

    /// Linear growth constant `M` with `|L(t,y)| <= M(1+|y|)`.
    pub fn growth_m(&self) -> f64 {
        let off = self.offset_l.sup_abs().max(self.offset_r.sup_abs());
        self.kappa1
            .max(self.kappa2 * std::f64::consts::FRAC_PI_2 + off)
    }

    /// Separation `inf_t (offset_l - offset_r)`; must be positive.
    pub fn gap_on(&self, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| self.offset_l.value(t) - self.offset_r.value(t))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_affine(&self) -> bool {
        self.kappa2 == 0.0
    }

    pub fn validate(&self, times: &[f64]) -> Result<()> {
        if !(self.kappa1 > 0.0) || !self.kappa1.is_finite() {
            return Err(Error::Loss("kappa1 must be positive and finite".into()));
        }
        if self.kappa2 < 0.0 || !self.kappa2.is_finite() {
            return Err(Error::Loss("kappa2 must be nonnegative and finite".into()));
        }
        let gap = self.gap_on(times);
        if !(gap > 0.0) {
            return Err(Error::Loss(format!(
                "separation gap violated: inf(R - L) = {gap} must be positive \
                 (offset_l must exceed offset_r)"
            )));
        }
        Ok(())
    }
}

/// How the fixed-point iteration is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitGuess {
    /// Start from the unreflected solution (default; one reflection away
    /// from the answer when the y-dependence is weak).
    Unreflected,
    /// Start from the field that freezes the terminal slice at every time.
    FrozenTerminal,
}

/// Numerical policies for the reflection pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Policies {
    /// Root/flatness tolerance handed to the Skorokhod solver.
    pub tol: f64,
    /// Sup-norm stopping threshold of the frozen-argument iteration.
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    /// Shift-lattice size for tabulated (non-affine) constraint functions.
    pub shift_lattice: usize,
    /// Tree depth for K-martingale certificates.
    pub tree_depth: usize,
    pub m_schedule: Vec<f64>,
    pub theta_schedule: Vec<f64>,
    /// Target for `M * delta` when picking the sub-interval length.
    pub contraction_margin: f64,
    /// Safety factor on the small-interval condition of the truncation
    /// ladder.
    pub h_safety: f64,
    pub init: InitGuess,
    /// Number of grid times at which truncation gaps are measured.
    pub check_times: usize,
}

impl Default for Policies {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            fixed_point_tol: 1e-6,
            max_iterations: 40,
            shift_lattice: 257,
            tree_depth: 8,
            m_schedule: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            theta_schedule: vec![0.5, 0.9, 0.99],
            contraction_margin: 0.5,
            h_safety: 0.9,
            init: InitGuess::Unreflected,
            check_times: 17,
        }
    }
}

/// Deterministic constraint functions induced by a solved unreflected
/// component: `l(t, x) = E[L(t, y_t - E[y_t] + x)]` and its `r` analogue,
/// together with the mean path and terminal anchor that feed the backward
/// Skorokhod problem.
#[derive(Debug, Clone)]
pub struct ConstraintFunctions {
    pub times: Vec<f64>,
    /// Mean path of the unreflected component, `E[y_t]`.
    pub mu: Vec<f64>,
    /// Input path of the backward problem: `E[y_0] - E[y_t]`.
    pub s_path: Vec<f64>,
    /// Terminal anchor `E[xi]`.
    pub anchor: f64,
    kind: ConstraintKind,
    c_lo: f64,
}

#[derive(Debug, Clone)]
enum ConstraintKind {
    /// Affine losses commute with the sublinear mean up to the centering
    /// term `e_t = E[y_t - E[y_t]]` (zero up to scheme rounding):
    /// `l(t, x) = kappa1*(x + e_t) - offset(t)`.
    Affine {
        kappa1: f64,
        e_path: Vec<f64>,
        off_l: Vec<f64>,
        off_r: Vec<f64>,
    },
    /// General losses tabulated on a shift lattice per time index, with
    /// monotone piecewise-linear interpolation in the shift.
    Table {
        shifts: Vec<f64>,
        l: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
    },
}

impl ConstraintFunctions {
    pub fn l(&self, idx: usize, x: f64) -> f64 {
        match &self.kind {
            ConstraintKind::Affine {
                kappa1,
                e_path,
                off_l,
                ..
            } => kappa1 * (x + e_path[idx]) - off_l[idx],
            ConstraintKind::Table { shifts, l, .. } => table_eval(shifts, &l[idx], x),
        }
    }

    pub fn r(&self, idx: usize, x: f64) -> f64 {
        match &self.kind {
            ConstraintKind::Affine {
                kappa1,
                e_path,
                off_r,
                ..
            } => kappa1 * (x + e_path[idx]) - off_r[idx],
            ConstraintKind::Table { shifts, r, .. } => table_eval(shifts, &r[idx], x),
        }
    }

    pub fn c_lo(&self) -> f64 {
        self.c_lo
    }

    /// Fails when a constraint root could leave the tabulated shift range.
    fn check_root_coverage(&self) -> Result<()> {
        if let ConstraintKind::Table { shifts, l, r, .. } = &self.kind {
            let span = shifts[shifts.len() - 1];
            for idx in 0..l.len() {
                let reach = l[idx][mid(shifts)].abs().max(r[idx][mid(shifts)].abs()) / self.c_lo;
                if reach > span {
                    return Err(Error::LatticeEscape(format!(
                        "constraint root bracket {reach:.3} exceeds lattice span {span:.3} \
                         at time index {idx}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn mid(shifts: &[f64]) -> usize {
    shifts.len() / 2
}

/// Monotone piecewise-linear interpolation with linear extension.
fn table_eval(shifts: &[f64], row: &[f64], x: f64) -> f64 {
    let n = shifts.len();
    let h = shifts[1] - shifts[0];
    let pos = (x - shifts[0]) / h;
    if pos <= 0.0 {
        return row[0] + (row[1] - row[0]) * pos;
    }
    if pos >= (n - 1) as f64 {
        return row[n - 1] + (row[n - 1] - row[n - 2]) * (pos - (n - 1) as f64);
    }
    let i = pos.floor() as usize;
    row[i] + (row[i + 1] - row[i]) * (pos - i as f64)
}

/// Builds the constraint functions for a solved unreflected component. Every
/// entry costs one engine sweep from its time back to the global origin, so
/// affine losses take the exact closed-form path and only general losses pay
/// for the full shift lattice.
pub fn build_constraints(
    y_sol: &GBSDESolution,
    loss: &LossSpec,
    pol: &Policies,
    global_t_start: f64,
) -> Result<ConstraintFunctions> {
    let grid = *y_sol.grid();
    let band = *y_sol.band();
    let dt = grid.dt();
    let dx = grid.dx();
    let zero_idx = zero_index_for(&grid, global_t_start)?;
    let times = grid.times();
    loss.validate(&times)?;

    let steps_to_origin =
        |i: usize| -> usize { ((times[i] - global_t_start) / dt).round() as usize };

    // Mean path of the unreflected component.
    let mut mu = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        mu.push(expectation_from_slice(
            y_sol.y.slice(i),
            &band,
            dt,
            dx,
            steps_to_origin(i),
            zero_idx,
        )?);
    }
    let s_path: Vec<f64> = mu.iter().map(|m| mu[0] - m).collect();
    let anchor = *mu.last().unwrap();

    let kind = if loss.is_affine() {
        let mut e_path = Vec::with_capacity(times.len());
        let mut off_l = Vec::with_capacity(times.len());
        let mut off_r = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let centered: Vec<f64> = y_sol.y.slice(i).iter().map(|v| v - mu[i]).collect();
            e_path.push(expectation_from_slice(
                &centered,
                &band,
                dt,
                dx,
                steps_to_origin(i),
                zero_idx,
            )?);
            off_l.push(loss.offset_l.value(times[i]));
            off_r.push(loss.offset_r.value(times[i]));
        }
        ConstraintKind::Affine {
            kappa1: loss.kappa1,
            e_path,
            off_l,
            off_r,
        }
    } else {
        // First pass: values at shift zero fix the lattice span.
        let mut l0 = Vec::with_capacity(times.len());
        let mut r0 = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let t = times[i];
            let row_l: Vec<f64> = y_sol
                .y
                .slice(i)
                .iter()
                .map(|v| loss.eval_l(t, v - mu[i]))
                .collect();
            let row_r: Vec<f64> = y_sol
                .y
                .slice(i)
                .iter()
                .map(|v| loss.eval_r(t, v - mu[i]))
                .collect();
            let steps = steps_to_origin(i);
            l0.push(expectation_from_slice(
                &row_l, &band, dt, dx, steps, zero_idx,
            )?);
            r0.push(expectation_from_slice(
                &row_r, &band, dt, dx, steps, zero_idx,
            )?);
        }
        let reach = l0
            .iter()
            .chain(r0.iter())
            .map(|v| v.abs())
            .fold(0.0f64, f64::max)
            / loss.c_lo();
        let span = 1.25 * reach + 1.0;
        let n_shift = pol.shift_lattice.max(9);
        let shifts: Vec<f64> = (0..n_shift)
            .map(|j| -span + 2.0 * span * j as f64 / (n_shift - 1) as f64)
            .collect();
        let mut l = Vec::with_capacity(times.len());
        let mut r = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let t = times[i];
            let steps = steps_to_origin(i);
            let mut row_l = Vec::with_capacity(n_shift);
            let mut row_r = Vec::with_capacity(n_shift);
            for &shift in &shifts {
                let sampled_l: Vec<f64> = y_sol
                    .y
                    .slice(i)
                    .iter()
                    .map(|v| loss.eval_l(t, v - mu[i] + shift))
                    .collect();
                let sampled_r: Vec<f64> = y_sol
                    .y
                    .slice(i)
                    .iter()
                    .map(|v| loss.eval_r(t, v - mu[i] + shift))
                    .collect();
                row_l.push(expectation_from_slice(
                    &sampled_l, &band, dt, dx, steps, zero_idx,
                )?);
                row_r.push(expectation_from_slice(
                    &sampled_r, &band, dt, dx, steps, zero_idx,
                )?);
            }
            l.push(row_l);
            r.push(row_r);
        }
        ConstraintKind::Table { shifts, l, r }
    };

    let cf = ConstraintFunctions {
        times,
        mu,
        s_path,
        anchor,
        kind,
        c_lo: loss.c_lo(),
    };
    cf.check_root_coverage()?;
    Ok(cf)
}

fn zero_index_for(grid: &GridSpec, _global_t_start: f64) -> Result<usize> {
    grid.zero_index().map_err(|_| {
        Error::Grid(
            "mean-constrained solves need x = 0 on a grid node; build the grid \
             with GridSpec::centered"
                .into(),
        )
    })
}

/// Solution of the doubly mean-reflected equation on a grid: the assembled
/// Y field, its Z table, the deterministic reflector `A = A^R - A^L`, the
/// mean path and the moving-band roots, plus flatness residuals from the
/// Skorokhod solve.
#[derive(Debug, Clone)]
pub struct MRSolution {
    pub y: FieldSolution,
    /// The unreflected component field: on each solve window,
    /// `Y_t = y_t + (A_T - A_t)` with the window's own reflector.
    pub y_unreflected: FieldSolution,
    /// Per-time deterministic shift `A_T - A_t` of the window containing the
    /// time (equals the global remaining mass on a single window).
    pub shift: Vec<f64>,
    z: Vec<Vec<f64>>,
    pub gen: GeneratorSpec,
    pub a: Vec<f64>,
    pub a_r: Vec<f64>,
    pub a_l: Vec<f64>,
    /// `E[Y_t]`, the state of the backward Skorokhod problem.
    pub mean_y: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
    pub flatness_l: f64,
    pub flatness_r: f64,
    /// `E[y_t]` of the unreflected component (diagnostic).
    pub mu: Vec<f64>,
}

impl MRSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.y.grid
    }

    pub fn band(&self) -> &VolatilityBand {
        &self.y.band
    }

    pub fn y_at(&self, time_idx: usize, x: f64) -> f64 {
        self.y.value_at(time_idx, x)
    }

    pub fn z_slice(&self, time_idx: usize) -> &[f64] {
        &self.z[time_idx]
    }

    /// Deterministic shift between Y and the unreflected component.
    pub fn a_shift(&self, time_idx: usize) -> f64 {
        self.shift[time_idx]
    }

    /// The unreflected component `y_t = Y_t - (A_T - A_t)`.
    pub fn unreflected_at(&self, time_idx: usize, x: f64) -> f64 {
        self.y_unreflected.value_at(time_idx, x)
    }

    pub fn a_total_variation(&self) -> f64 {
        self.a_r[self.a_r.len() - 1] + self.a_l[self.a_l.len() - 1]
    }

    /// K path along a grid scenario, reconstructed from the assembled field.
    pub fn k_path(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        let stub = GBSDESolutionView {
            field: &self.y,
            z: &self.z,
            gen: &self.gen,
        };
        stub.k_path(scenario)
    }

    pub fn k_martingale_residual(&self, depth: usize) -> Result<f64> {
        k_residual_from_field(&self.y, &self.gen, None, Some(&self.a), depth)
    }
}

/// Minimal view implementing K reconstruction for an assembled field.
struct GBSDESolutionView<'a> {
    field: &'a FieldSolution,
    z: &'a [Vec<f64>],
    gen: &'a GeneratorSpec,
}

impl GBSDESolutionView<'_> {
    fn k_path(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        let grid = self.field.grid;
        if scenario.len() != grid.n_time {
            return Err(Error::GridMismatch(format!(
                "scenario length {} != n_time {}",
                scenario.len(),
                grid.n_time
            )));
        }
        let band = self.field.band;
        let dt = grid.dt();
        let dx = grid.dx();
        let mut k = vec![0.0];
        let mut acc = 0.0;
        let mut x = 0.0;
        for step in 0..grid.n_time {
            let row = self.field.slice(step);
            let n = row.len();
            let pos = ((x - grid.x_min) / dx).clamp(0.0, (n - 1) as f64);
            let i = (pos.round() as usize).clamp(1, n - 2);
            let half_dxx = 0.5 * (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (dx * dx);
            let t = grid.time_at(step);
            let y = crate::engine::interp_row(row, &grid, x);
            let z = crate::engine::interp_row(&self.z[step], &grid, x);
            let a = half_dxx + self.gen.g(t, y, z);
            let s = scenario.vol_sq(&band, step);
            acc += dt * (s * a - 2.0 * crate::engine::g_raw(a, &band));
            k.push(acc);
            x += scenario.increment(&band, dt, step);
        }
        Ok(k)
    }
}

/// One application of the solution map with the generator's y-argument
/// frozen at `frozen_y`: unreflected solve, constraint construction,
/// backward Skorokhod problem by reversal, and assembly of
/// `Y_t = y_t + (A_T - A_t)`.
pub fn solve_frozen(
    frozen_y: &FieldSolution,
    terminal: &Payoff,
    gen: &GeneratorSpec,
    loss: &LossSpec,
    band: &VolatilityBand,
    grid: &GridSpec,
    pol: &Policies,
    global_t_start: f64,
) -> Result<MRSolution> {
    let y_sol = solve_gbsde_frozen(terminal, gen, frozen_y, band, grid)?;
    reflect_component(y_sol, loss, pol, global_t_start)
}

/// Shared tail of the frozen map: everything after the unreflected solve.
fn reflect_component(
    y_sol: GBSDESolution,
    loss: &LossSpec,
    pol: &Policies,
    global_t_start: f64,
) -> Result<MRSolution> {
    let grid = *y_sol.grid();
    let cf = build_constraints(&y_sol, loss, pol, global_t_start)?;
    let n = grid.n_time;

    // Terminal admissibility: E[L(T, xi)] <= 0 <= E[R(T, xi)] up to the
    // root tolerance (stitched intervals reuse solved slices, so exact zeros
    // arrive with scheme rounding on them).
    let slack = pol.tol.max(1e-9);
    let l_term = cf.l(n, cf.anchor);
    let r_term = cf.r(n, cf.anchor);
    if l_term > slack || r_term < -slack {
        return Err(Error::Anchor(format!(
            "terminal mean constraint violated: E[L(T, xi)] = {l_term}, E[R(T, xi)] = {r_term}"
        )));
    }

    // Backward Skorokhod problem by time reversal.
    let reversed: Vec<f64> = (0..=n).map(|i| cf.mu[n - i]).collect();
    let core = sp_core(
        &reversed,
        &|i, x| cf.l(n - i, x),
        &|i, x| cf.r(n - i, x),
        cf.c_lo(),
        pol.tol,
    )?;
    let bsp: SkorokhodSolution = assemble_reversed(grid.times(), core);

    // Assemble Y = y + (A_T - A_t).
    let a_end = *bsp.k.last().unwrap();
    let shift: Vec<f64> = (0..=n).map(|i| a_end - bsp.k[i]).collect();
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..=n {
        values.push(
            y_sol
                .y
                .slice(i)
                .iter()
                .map(|v| v + shift[i])
                .collect::<Vec<f64>>(),
        );
    }
    let y_field = FieldSolution::from_values(grid, *y_sol.band(), values);
    let z: Vec<Vec<f64>> = (0..=n).map(|i| y_sol.z_slice(i).to_vec()).collect();

    Ok(MRSolution {
        y: y_field,
        y_unreflected: y_sol.y.clone(),
        shift,
        z,
        gen: y_sol.gen.clone(),
        a: bsp.k,
        a_r: bsp.k_r,
        a_l: bsp.k_l,
        mean_y: bsp.x,
        band_lower: bsp.band_lower,
        band_upper: bsp.band_upper,
        flatness_l: bsp.flatness_l,
        flatness_r: bsp.flatness_r,
        mu: cf.mu,
    })
}

/// Fixed-point diagnostics of the frozen-argument iteration.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointDiagnostics {
    /// Sub-interval length policy outcome.
    pub delta: f64,
    /// Contraction constant `(1 + 3C/c) * L1 * sigma_high`.
    pub contraction_constant: f64,
    pub n_intervals: usize,
    pub per_interval: Vec<IntervalDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalDiagnostics {
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl FixedPointDiagnostics {
    pub fn max_ratio(&self) -> f64 {
        self.per_interval
            .iter()
            .flat_map(|d| d.ratios.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn max_iterations(&self) -> usize {
        self.per_interval
            .iter()
            .map(|d| d.iterations)
            .max()
            .unwrap_or(0)
    }
}

/// Solves the doubly mean-reflected equation with bounded data: picks a
/// sub-interval length with `M * delta` at the contraction margin, partitions
/// the grid, and on each sub-interval (backward) iterates the frozen map to
/// its fixed point, stitching `Y`, `Z` and `A` across the knots.
pub fn solve_bounded(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    loss: &LossSpec,
    band: &VolatilityBand,
    grid: &GridSpec,
    pol: &Policies,
) -> Result<(MRSolution, FixedPointDiagnostics)> {
    gen.validate()?;
    grid.validate(band)?;
    loss.validate(&grid.times())?;
    let horizon = grid.t_end - grid.t_start;
    let m_const = contraction_constant(gen, loss, band);
    let delta = if m_const > 0.0 {
        (pol.contraction_margin / m_const).min(horizon)
    } else {
        horizon
    };
    let n_iv = dividing_interval_count(grid.n_time, (horizon / delta).ceil() as usize);
    let sol = solve_partitioned(terminal, gen, loss, band, grid, pol, n_iv, delta, m_const)?;
    Ok(sol)
}

/// `M(c, C, L1, sigma_high) = (1 + 3C/c) * L1 * sigma_high`.
pub fn contraction_constant(gen: &GeneratorSpec, loss: &LossSpec, band: &VolatilityBand) -> f64 {
    (1.0 + 3.0 * loss.c_hi() / loss.c_lo()) * gen.lip_y() * band.sigma_high()
}

fn dividing_interval_count(n_time: usize, wanted: usize) -> usize {
    let wanted = wanted.clamp(1, n_time);
    (wanted..=n_time)
        .find(|k| n_time % k == 0)
        .unwrap_or(n_time)
}

#[allow(clippy::too_many_arguments)]
fn solve_partitioned(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    loss: &LossSpec,
    band: &VolatilityBand,
    grid: &GridSpec,
    pol: &Policies,
    n_iv: usize,
    delta: f64,
    m_const: f64,
) -> Result<(MRSolution, FixedPointDiagnostics)> {
    let step = grid.n_time / n_iv;
    let mut interval_solutions: Vec<Option<MRSolution>> = (0..n_iv).map(|_| None).collect();
    let mut per_interval = Vec::with_capacity(n_iv);
    let mut terminal_k = terminal.clone();

    for k in (0..n_iv).rev() {
        let i0 = k * step;
        let i1 = (k + 1) * step;
        let sub = grid.time_window(i0, i1)?;
        let (sol, diag) =
            fixed_point_interval(&terminal_k, gen, loss, band, &sub, pol, grid.t_start)?;
        if k > 0 {
            terminal_k = sol.y.slice_payoff(0, terminal.growth())?;
        }
        per_interval.push(diag);
        interval_solutions[k] = Some(sol);
    }
    per_interval.reverse();

    let stitched = stitch(grid, band, gen, interval_solutions)?;
    Ok((
        stitched,
        FixedPointDiagnostics {
            delta,
            contraction_constant: m_const,
            n_intervals: n_iv,
            per_interval,
        },
    ))
}

fn fixed_point_interval(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    loss: &LossSpec,
    band: &VolatilityBand,
    sub: &GridSpec,
    pol: &Policies,
    global_t_start: f64,
) -> Result<(MRSolution, IntervalDiagnostics)> {
    let init: FieldSolution = match pol.init {
        InitGuess::Unreflected => solve_gbsde(terminal, gen, band, sub)?.y,
        InitGuess::FrozenTerminal => {
            let row = terminal.sample(&sub.xs());
            let values = vec![row; sub.n_time + 1];
            FieldSolution::from_values(*sub, *band, values)
        }
    };
    let mut frozen = init;
    let mut gaps = Vec::new();
    let mut ratios = Vec::new();
    for iter in 0..pol.max_iterations {
        let sol = solve_frozen(&frozen, terminal, gen, loss, band, sub, pol, global_t_start)?;
        let gap = field_sup_distance(&sol.y, &frozen);
        if let Some(prev) = gaps.last() {
            // Ratios are meaningful only above the rounding floor.
            if *prev > 1e-13 {
                ratios.push(gap / prev);
            }
        }
        gaps.push(gap);
        if gap <= pol.fixed_point_tol {
            return Ok((
                sol,
                IntervalDiagnostics {
                    iterations: iter + 1,
                    gaps,
                    ratios,
                },
            ));
        }
        frozen = sol.y.clone();
        if ratios.len() >= 3 && ratios.iter().rev().take(3).all(|r| *r > 1.0) {
            return Err(Error::NonContraction(format!(
                "gap ratios {ratios:?} exceeded one on three consecutive iterations"
            )));
        }
    }
    Err(Error::NonContraction(format!(
        "no convergence within {} iterations (last gap {:.3e})",
        pol.max_iterations,
        gaps.last().copied().unwrap_or(f64::NAN)
    )))
}

fn field_sup_distance(a: &FieldSolution, b: &FieldSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 0..=a.grid.n_time {
        let (ra, rb) = (a.slice(n), b.slice(n));
        for i in 0..ra.len() {
            worst = worst.max((ra[i] - rb[i]).abs());
        }
    }
    worst
}

fn stitch(
    grid: &GridSpec,
    band: &VolatilityBand,
    gen: &GeneratorSpec,
    intervals: Vec<Option<MRSolution>>,
) -> Result<MRSolution> {
    let n = grid.n_time;
    let n_iv = intervals.len();
    let step = n / n_iv;
    let mut values = vec![Vec::new(); n + 1];
    let mut unreflected = vec![Vec::new(); n + 1];
    let mut shift = vec![0.0; n + 1];
    let mut z = vec![Vec::new(); n + 1];
    let mut a = vec![0.0; n + 1];
    let mut a_r = vec![0.0; n + 1];
    let mut a_l = vec![0.0; n + 1];
    let mut mean_y = vec![0.0; n + 1];
    let mut lower = vec![0.0; n + 1];
    let mut upper = vec![0.0; n + 1];
    let mut mu = vec![0.0; n + 1];
    let (mut off_a, mut off_r, mut off_l) = (0.0, 0.0, 0.0);
    let mut flat_l = 0.0;
    let mut flat_r = 0.0;
    for (k, sol) in intervals.into_iter().enumerate() {
        let sol = sol.expect("every interval solved");
        let base = k * step;
        for i in 0..=step {
            let gi = base + i;
            values[gi] = sol.y.slice(i).to_vec();
            unreflected[gi] = sol.y_unreflected.slice(i).to_vec();
            shift[gi] = sol.shift[i];
            z[gi] = sol.z_slice(i).to_vec();
            a[gi] = off_a + sol.a[i];
            a_r[gi] = off_r + sol.a_r[i];
            a_l[gi] = off_l + sol.a_l[i];
            mean_y[gi] = sol.mean_y[i];
            lower[gi] = sol.band_lower[i];
            upper[gi] = sol.band_upper[i];
            mu[gi] = sol.mu[i];
        }
        off_a = a[base + step];
        off_r = a_r[base + step];
        off_l = a_l[base + step];
        flat_l += sol.flatness_l;
        flat_r += sol.flatness_r;
    }
    Ok(MRSolution {
        y: FieldSolution::from_values(*grid, *band, values),
        y_unreflected: FieldSolution::from_values(*grid, *band, unreflected),
        shift,
        z,
        gen: gen.clone(),
        a,
        a_r,
        a_l,
        mean_y,
        band_lower: lower,
        band_upper: upper,
        flatness_l: flat_l,
        flatness_r: flat_r,
        mu,
    })
}

/// Truncation-ladder diagnostics: per-level Cauchy gaps and the theta-scaled
/// distances of the last pair.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaDiagnostics {
    pub m_schedule: Vec<f64>,
    /// `max_t E[|Y^(next) - Y^(cur)|_t]` per consecutive pair.
    pub gaps_y: Vec<f64>,
    /// `sup_t |A^(next) - A^(cur)|` per consecutive pair.
    pub gaps_a: Vec<f64>,
    pub converged: bool,
    pub h: f64,
    pub n_intervals: usize,
    pub theta_entries: Vec<ThetaEntry>,
    pub fixed_point: Vec<FixedPointDiagnostics>,
    /// Computable data constant `(C/c) E[|xi|] + sup_t |A0_t|`, where `A0`
    /// reflects the constant path `E[xi]` between the raw loss boundaries.
    pub data_constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaEntry {
    pub theta: f64,
    pub sup_y: f64,
    pub sup_y_unreflected: f64,
}

/// Theta-scaled distance `(first - theta*second) / (1 - theta)` between two
/// solutions on a shared grid; records sup-norms for the assembled Y and the
/// unreflected component.
pub fn theta_distance(first: &MRSolution, second: &MRSolution, theta: f64) -> Result<ThetaEntry> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::Config(format!(
            "theta must be in [0, 1), got {theta}"
        )));
    }
    if first.grid() != second.grid() {
        return Err(Error::GridMismatch(
            "theta distance needs equal grids".into(),
        ));
    }
    let grid = first.grid();
    let scale = 1.0 / (1.0 - theta);
    let mut sup_y: f64 = 0.0;
    let mut sup_u: f64 = 0.0;
    for n in 0..=grid.n_time {
        let (ra, rb) = (first.y.slice(n), second.y.slice(n));
        let (ua, ub) = (first.y_unreflected.slice(n), second.y_unreflected.slice(n));
        for i in 0..ra.len() {
            sup_y = sup_y.max(scale * (ra[i] - theta * rb[i]).abs());
            sup_u = sup_u.max(scale * (ua[i] - theta * ub[i]).abs());
        }
    }
    Ok(ThetaEntry {
        theta,
        sup_y,
        sup_y_unreflected: sup_u,
    })
}

/// Solves the equation with unbounded terminal data through the truncation
/// ladder: each level clamps the data at `m`, solves the bounded problem on
/// sub-intervals short enough for the small-interval condition
/// `(128 + 768 C/c) L1 h ratio_amp / ratio < 1`, and the Cauchy gaps between
/// consecutive levels are recorded and must decrease.
pub fn solve_unbounded(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    loss: &LossSpec,
    band: &VolatilityBand,
    grid: &GridSpec,
    pol: &Policies,
) -> Result<(MRSolution, ThetaDiagnostics)> {
    gen.validate()?;
    grid.validate(band)?;
    loss.validate(&grid.times())?;
    if !gen.is_zero_in_f() {
        return Err(Error::Generator(
            "the truncation ladder requires a zero dt-generator (f = 0)".into(),
        ));
    }
    let ratio = band.ratio_sq()?;
    let ratio_amp = band.ratio_sq_amplified()?;
    if pol.m_schedule.len() < 2 || pol.m_schedule.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "m_schedule must be strictly increasing with at least two levels".into(),
        ));
    }

    let horizon = grid.t_end - grid.t_start;
    let m_const = contraction_constant(gen, loss, band);
    let l1 = gen.lip_y();
    let mut h = if m_const > 0.0 {
        (pol.contraction_margin / m_const).min(horizon)
    } else {
        horizon
    };
    if l1 > 0.0 {
        let c_ratio = loss.c_hi() / loss.c_lo();
        h = h.min(pol.h_safety * ratio / ((128.0 + 768.0 * c_ratio) * l1 * ratio_amp));
    }
    let n_iv = dividing_interval_count(grid.n_time, (horizon / h).ceil() as usize);

    let mut previous: Option<MRSolution> = None;
    let mut gaps_y = Vec::new();
    let mut gaps_a = Vec::new();
    let mut fixed_point = Vec::new();
    let mut last_pair: Option<(MRSolution, MRSolution)> = None;
    for &m in &pol.m_schedule {
        let level = TruncationLevel::new(m)?;
        let (gen_m, term_m) = truncate(gen, terminal, level, grid);
        let (sol, diag) =
            solve_partitioned(&term_m, &gen_m, loss, band, grid, pol, n_iv, h, m_const)?;
        fixed_point.push(diag);
        if let Some(prev) = previous.take() {
            gaps_y.push(mean_gap(&prev, &sol, pol)?);
            gaps_a.push(
                prev.a
                    .iter()
                    .zip(&sol.a)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max),
            );
            let total: Vec<f64> = gaps_y.iter().zip(&gaps_a).map(|(y, a)| y + a).collect();
            if total.len() >= 3 {
                let k = total.len();
                if total[k - 1] >= total[k - 2] && total[k - 2] >= total[k - 3] {
                    return Err(Error::GapsNotDecreasing(format!(
                        "gaps {total:?} failed to decrease over three levels"
                    )));
                }
            }
            last_pair = Some((prev, sol.clone()));
        }
        previous = Some(sol);
    }
    let final_sol = previous.unwrap();
    let converged = gaps_y
        .last()
        .zip(gaps_a.last())
        .map(|(y, a)| y + a <= pol.fixed_point_tol.max(1e-4))
        .unwrap_or(false);
    let mut theta_entries = Vec::new();
    if let Some((prev, last)) = &last_pair {
        for &theta in &pol.theta_schedule {
            theta_entries.push(theta_distance(last, prev, theta)?);
        }
    }
    let data_constant = data_constant(terminal, loss, band, grid, pol)?;
    Ok((
        final_sol,
        ThetaDiagnostics {
            m_schedule: pol.m_schedule.clone(),
            gaps_y,
            gaps_a,
            converged,
            h,
            n_intervals: n_iv,
            theta_entries,
            fixed_point,
            data_constant,
        },
    ))
}

/// `(C/c) E[|xi|] + sup_t |A0_t|` with `A0` the reflector of the constant
/// path `E[xi]` between the raw (deterministic) loss boundaries, evaluated
/// through the same time reversal as the main construction.
fn data_constant(
    terminal: &Payoff,
    loss: &LossSpec,
    band: &VolatilityBand,
    grid: &GridSpec,
    pol: &Policies,
) -> Result<f64> {
    let zero_idx = grid.zero_index()?;
    let xs = grid.xs();
    let abs_row: Vec<f64> = xs.iter().map(|&x| terminal.eval(x).abs()).collect();
    let e_abs =
        expectation_from_slice(&abs_row, band, grid.dt(), grid.dx(), grid.n_time, zero_idx)?;
    let row: Vec<f64> = xs.iter().map(|&x| terminal.eval(x)).collect();
    let e_xi = expectation_from_slice(&row, band, grid.dt(), grid.dx(), grid.n_time, zero_idx)?;
    let n = grid.n_time;
    let times = grid.times();
    let core = sp_core(
        &vec![e_xi; n + 1],
        &|i, x| loss.eval_l(times[n - i], x),
        &|i, x| loss.eval_r(times[n - i], x),
        loss.c_lo(),
        pol.tol,
    )?;
    let sup_a0 = core.k.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(loss.c_hi() / loss.c_lo() * e_abs + sup_a0)
}

/// `max_t E[|Y^1_t - Y^2_t|]` over a subsample of grid times, evaluated by
/// the engine so that far-field clamp differences are weighted by the
/// scenario mass that can reach them.
fn mean_gap(a: &MRSolution, b: &MRSolution, pol: &Policies) -> Result<f64> {
    let grid = a.grid();
    let band = a.band();
    let dt = grid.dt();
    let dx = grid.dx();
    let zero_idx = grid.zero_index()?;
    let checks = pol.check_times.max(2);
    let mut worst: f64 = 0.0;
    for j in 0..checks {
        let i = (j * grid.n_time) / (checks - 1);
        let row: Vec<f64> =
            a.y.slice(i)
                .iter()
                .zip(b.y.slice(i))
                .map(|(p, q)| (p - q).abs())
                .collect();
        let steps = ((grid.time_at(i) - grid.t_start) / dt).round() as usize;
        worst = worst.max(expectation_from_slice(&row, band, dt, dx, steps, zero_idx)?);
    }
    Ok(worst)
}

/// Certificates of a solved instance: constraint margins, discrete flatness
/// sums against the reflector, K diagnostics and the reflector decomposition
/// checks. Report-only.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    /// `max_t E[L(t, Y_t)]^+` (upper constraint violation).
    pub l_margin: f64,
    /// `max_t E[R(t, Y_t)]^-` (lower constraint violation).
    pub r_margin: f64,
    /// `|sum E[R(t_i, Y_i)] dA^R_i|` and the L-analogue.
    pub flatness_r: f64,
    pub flatness_l: f64,
    /// Adapted-tree residual `max |E_s[K_t] - K_s|`.
    pub k_residual: f64,
    /// Max pathwise increase of K over sampled scenarios (should be ~0).
    pub k_max_increase: f64,
    pub a_monotone: bool,
    /// No step moves both reflectors.
    pub a_complementary: bool,
    /// Max deviation of `Y - y - (A_T - A_t)` from zero (exact by
    /// construction).
    pub representation_error: f64,
    pub a_total: f64,
}

impl CertificateReport {
    /// Pass/fail against declared tolerances: margins and flatness scale
    /// with `tol_margin`, flatness additionally with the reflector mass.
    pub fn passes(&self, tol_margin: f64, tol_flatness: f64) -> bool {
        self.l_margin <= tol_margin
            && self.r_margin <= tol_margin
            && self.flatness_r <= tol_flatness * self.a_total.max(1e-12)
            && self.flatness_l <= tol_flatness * self.a_total.max(1e-12)
            && self.a_monotone
            && self.a_complementary
            && self.representation_error == 0.0
    }
}

/// Evaluates all certificates for a solution. Margins are recomputed through
/// the engine (not read back from the Skorokhod roots), so this is an
/// independent pass over the defining conditions.
pub fn verify_solution(
    sol: &MRSolution,
    loss: &LossSpec,
    pol: &Policies,
    global_t_start: f64,
) -> Result<CertificateReport> {
    let grid = *sol.grid();
    let band = *sol.band();
    let dt = grid.dt();
    let dx = grid.dx();
    let zero_idx = grid.zero_index()?;
    let n = grid.n_time;

    let mut l_margin: f64 = 0.0;
    let mut r_margin: f64 = 0.0;
    let mut flat_l = 0.0;
    let mut flat_r = 0.0;
    for i in 0..=n {
        let t = grid.time_at(i);
        let steps = ((t - global_t_start) / dt).round() as usize;
        let row_l: Vec<f64> = sol.y.slice(i).iter().map(|v| loss.eval_l(t, *v)).collect();
        let row_r: Vec<f64> = sol.y.slice(i).iter().map(|v| loss.eval_r(t, *v)).collect();
        let el = expectation_from_slice(&row_l, &band, dt, dx, steps, zero_idx)?;
        let er = expectation_from_slice(&row_r, &band, dt, dx, steps, zero_idx)?;
        l_margin = l_margin.max(el);
        r_margin = r_margin.max(-er);
        if i > 0 {
            flat_r += er * (sol.a_r[i] - sol.a_r[i - 1]);
            flat_l += el * (sol.a_l[i] - sol.a_l[i - 1]);
        }
    }

    let mut a_monotone = true;
    let mut a_complementary = true;
    for i in 1..=n {
        let dr = sol.a_r[i] - sol.a_r[i - 1];
        let dl = sol.a_l[i] - sol.a_l[i - 1];
        if dr < 0.0 || dl < 0.0 {
            a_monotone = false;
        }
        if dr > 0.0 && dl > 0.0 {
            a_complementary = false;
        }
    }

    // Pathwise K monotonicity over a scenario sample.
    let mut k_max_increase: f64 = 0.0;
    let scale = sol.y.sup_abs().max(1.0);
    let mut masks: Vec<(u64, u64)> =
        vec![(0, 0), (u64::MAX, u64::MAX), (u64::MAX, 0), (0, u64::MAX)];
    let mut state = 0x9e3779b97f4a7c15u64;
    for _ in 0..12 {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let hi = state;
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        masks.push((hi, state));
    }
    for (hm, um) in masks {
        let k = sol.k_path(&Scenario::from_masks(n, hm, um))?;
        for w in k.windows(2) {
            k_max_increase = k_max_increase.max(w[1] - w[0]);
        }
    }
    let k_max_increase = if k_max_increase <= 1e-8 * scale {
        k_max_increase.max(0.0)
    } else {
        k_max_increase
    };

    // Representation identity: the assembled field was built as
    // y_unreflected + shift, so recomputing the sum must match bitwise.
    let mut representation_error: f64 = 0.0;
    for i in 0..=n {
        let shift = sol.shift[i];
        for (idx, v) in sol.y.slice(i).iter().enumerate() {
            let rebuilt = sol.y_unreflected.slice(i)[idx] + shift;
            representation_error = representation_error.max((v - rebuilt).abs());
        }
    }

    let k_residual = sol.k_martingale_residual(pol.tree_depth)?;

    Ok(CertificateReport {
        l_margin,
        r_margin,
        flatness_r: flat_r.abs(),
        flatness_l: flat_l.abs(),
        k_residual,
        k_max_increase,
        a_monotone,
        a_complementary,
        representation_error,
        a_total: sol.a_total_variation(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::GrowthTag;

    fn band() -> VolatilityBand {
        VolatilityBand::new(0.25, 1.0).unwrap()
    }

    /// The closed-form instance: driftless generator, identity terminal,
    /// L = y - 1 and R = y - d_t with d_t descending from 0.2 to 0 at the
    /// horizon (so the terminal mean constraint is exactly admissible).
    fn descending_loss(horizon: f64) -> LossSpec {
        LossSpec::affine(
            LinearFn::constant(1.0),
            LinearFn::from_knots(vec![(0.0, 0.2), (horizon, 0.0)]).unwrap(),
        )
    }

    fn closed_form_loss() -> LossSpec {
        descending_loss(1.0)
    }

    #[test]
    fn monotone_lower_boundary_closed_form() {
        let grid = GridSpec::centered(0.0, 1.0, 200, 201, &band()).unwrap();
        let pol = Policies::default();
        let (sol, diag) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &closed_form_loss(),
            &band(),
            &grid,
            &pol,
        )
        .unwrap();
        assert_eq!(diag.n_intervals, 1);
        for (i, &t) in grid.times().iter().enumerate() {
            let want = 0.2 * t;
            assert!(
                (sol.a[i] - want).abs() < 2e-3,
                "A at t={t}: {} vs {want}",
                sol.a[i]
            );
            assert_eq!(sol.a_l[i], 0.0);
            // E[Y_t] rides the descending boundary root.
            assert!((sol.mean_y[i] - 0.2 * (1.0 - t)).abs() < 2e-3);
        }
        let report = verify_solution(&sol, &closed_form_loss(), &pol, 0.0).unwrap();
        assert!(report.l_margin <= 2e-3, "l margin {}", report.l_margin);
        assert!(report.r_margin <= 2e-3, "r margin {}", report.r_margin);
        assert!(report.flatness_r <= 1e-3 * sol.a_total_variation());
        assert!(report.a_monotone && report.a_complementary);
        assert_eq!(report.representation_error, 0.0);
        assert!(report.k_residual <= 5e-3);
    }

    #[test]
    fn inactive_constraints_reduce_to_the_unreflected_solution() {
        let grid = GridSpec::centered(0.0, 1.0, 120, 121, &band()).unwrap();
        // Wide band: L = y - 5, R = y + 5.
        let loss = LossSpec::affine(LinearFn::constant(5.0), LinearFn::constant(-5.0));
        let (sol, _) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &loss,
            &band(),
            &grid,
            &Policies::default(),
        )
        .unwrap();
        assert!(sol.a.iter().all(|&v| v == 0.0));
        for (i, &x) in grid.xs().iter().enumerate() {
            assert!((sol.y.slice(grid.n_time / 2)[i] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn inactive_descending_boundary_gives_zero_reflector() {
        let grid = GridSpec::centered(0.0, 1.0, 120, 121, &band()).unwrap();
        let loss = LossSpec::affine(LinearFn::constant(1.0), LinearFn::constant(-0.5));
        // R root sits at -0.5 < E[Y_t] = 0: never active.
        let (sol, _) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &loss,
            &band(),
            &grid,
            &Policies::default(),
        )
        .unwrap();
        assert!(sol.a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_constraints_have_the_closed_form() {
        let grid = GridSpec::centered(0.0, 1.0, 100, 101, &band()).unwrap();
        let y_sol = solve_gbsde(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &band(),
            &grid,
        )
        .unwrap();
        let loss = LossSpec::affine(LinearFn::constant(1.0), LinearFn::constant(-1.0));
        let cf = build_constraints(&y_sol, &loss, &Policies::default(), 0.0).unwrap();
        // y_t = B_t is symmetric: l(t, x) = x - 1 exactly.
        for idx in [0, 50, 100] {
            for x in [-0.7, 0.0, 1.3] {
                assert!((cf.l(idx, x) - (x - 1.0)).abs() < 1e-10);
                assert!((cf.r(idx, x) - (x + 1.0)).abs() < 1e-10);
            }
        }
        assert!(cf.anchor.abs() < 1e-10);
    }

    #[test]
    fn softened_constraint_value_regression() {
        let grid = GridSpec::centered(0.0, 1.0, 60, 61, &band()).unwrap();
        let y_sol = solve_gbsde(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &band(),
            &grid,
        )
        .unwrap();
        let loss = LossSpec {
            kappa1: 1.0,
            kappa2: 0.5,
            offset_l: LinearFn::constant(1.0),
            offset_r: LinearFn::constant(-1.0),
        };
        let pol = Policies {
            shift_lattice: 65,
            ..Policies::default()
        };
        let cf = build_constraints(&y_sol, &loss, &pol, 0.0).unwrap();
        // E[B_1 + 0.5*atan(B_1)] - 1 at shift 0 under the band: frozen
        // engine value.
        let v = cf.l(grid.n_time, 0.0);
        assert!(
            (v - -0.9765551298181843).abs() < 1e-9,
            "regression moved: {v:.16}"
        );
        // Monotone in the shift with slopes inside [c, C].
        for idx in [0, 30, 60] {
            let (a, b) = (cf.l(idx, -0.4), cf.l(idx, 0.9));
            let slope = (b - a) / 1.3;
            assert!(slope >= loss.c_lo() - 1e-9 && slope <= loss.c_hi() + 1e-9);
        }
    }

    #[test]
    fn softened_losses_solve_end_to_end() {
        // The tabulated-lattice constraint path through the whole pipeline.
        let grid = GridSpec::centered(0.0, 1.0, 80, 81, &band()).unwrap();
        let loss = LossSpec {
            kappa1: 1.0,
            kappa2: 0.5,
            offset_l: LinearFn::constant(1.5),
            offset_r: LinearFn::from_knots(vec![(0.0, 0.3), (1.0, 0.0)]).unwrap(),
        };
        let pol = Policies {
            shift_lattice: 65,
            ..Policies::default()
        };
        let (sol, _) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &loss,
            &band(),
            &grid,
            &pol,
        )
        .unwrap();
        assert!(sol.a_total_variation() > 0.1, "boundary never active");
        let report = verify_solution(&sol, &loss, &pol, 0.0).unwrap();
        assert!(report.passes(2e-3, 1e-3), "{report:?}");
    }

    #[test]
    fn representation_identity_and_stitching_are_exact() {
        // y-dependent generator forces several sub-intervals.
        let grid = GridSpec::centered(0.0, 1.0, 240, 161, &band()).unwrap();
        let gen = GeneratorSpec {
            a_g: 0.6,
            gamma_g: 0.4,
            ..GeneratorSpec::zero()
        };
        let loss = closed_form_loss();
        let (sol, diag) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &gen,
            &loss,
            &band(),
            &grid,
            &Policies::default(),
        )
        .unwrap();
        assert!(diag.n_intervals > 1, "wanted a real partition");
        // A starts at zero, increments stay complementary, Y is continuous
        // across knots (slices are handed over exactly).
        assert_eq!(sol.a[0], 0.0);
        let report = verify_solution(&sol, &loss, &Policies::default(), 0.0).unwrap();
        assert_eq!(report.representation_error, 0.0);
        assert!(report.a_monotone && report.a_complementary);
        assert!(report.l_margin <= 2e-3 && report.r_margin <= 2e-3);
    }

    #[test]
    fn fixed_point_converges_and_reproduces_itself() {
        let grid = GridSpec::centered(0.0, 0.5, 100, 121, &band()).unwrap();
        let gen = GeneratorSpec {
            a_g: 0.2,
            gamma_g: 0.5,
            ..GeneratorSpec::zero()
        };
        let loss = descending_loss(0.5);
        let pol = Policies::default();
        let (sol, diag) =
            solve_bounded(&Payoff::linear(1.0, 0.0), &gen, &loss, &band(), &grid, &pol).unwrap();
        assert!(diag.max_iterations() <= 12, "{:?}", diag.per_interval);
        assert!(diag.max_ratio() <= 0.6, "ratio {}", diag.max_ratio());
        // Freeze consistency: one more application of the map moves nothing.
        let again = solve_frozen(
            &sol.y,
            &Payoff::linear(1.0, 0.0),
            &gen,
            &loss,
            &band(),
            &grid,
            &pol,
            0.0,
        );
        // (single-interval case only: the partitioned grid differs)
        if diag.n_intervals == 1 {
            let again = again.unwrap();
            assert!(field_sup_distance(&again.y, &sol.y) <= pol.fixed_point_tol * 2.0);
        }
    }

    #[test]
    fn contraction_constant_and_partition_count() {
        // M(c, C, L1, sigma_high) = (1 + 3C/c) L1 sigma_high.
        let b = VolatilityBand::new(0.25, 1.0).unwrap();
        let loss = LossSpec {
            kappa1: 1.0,
            kappa2: 1.0, // c = 1, C = 2
            offset_l: LinearFn::constant(1.0),
            offset_r: LinearFn::from_knots(vec![(0.0, 0.2), (1.0, 0.0)]).unwrap(),
        };
        let gen = GeneratorSpec {
            a_g: 0.5,
            ..GeneratorSpec::zero()
        };
        let m = contraction_constant(&gen, &loss, &b);
        assert!((m - 3.5).abs() < 1e-12, "M = {m}");
        // delta policy: margin/M = 1/7, so ceil(T/delta) = 7 sub-intervals,
        // rounded up to a divisor of n_time.
        let grid = GridSpec::centered(0.0, 1.0, 70, 81, &b).unwrap();
        let (_, diag) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &gen,
            &loss,
            &b,
            &grid,
            &Policies {
                shift_lattice: 33,
                ..Policies::default()
            },
        )
        .unwrap();
        assert_eq!(diag.n_intervals, 7);
        assert!((diag.delta - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn theta_distance_degenerate_cases() {
        let grid = GridSpec::centered(0.0, 1.0, 60, 61, &band()).unwrap();
        let (sol, _) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &closed_form_loss(),
            &band(),
            &grid,
            &Policies::default(),
        )
        .unwrap();
        // Equal arguments: delta_theta Y = Y, so the norm matches sup|Y|.
        let e = theta_distance(&sol, &sol, 0.5).unwrap();
        assert!((e.sup_y - sol.y.sup_abs()).abs() < 1e-12);
        // theta = 0 reduces to the first argument.
        let e0 = theta_distance(&sol, &sol, 0.0).unwrap();
        assert!((e0.sup_y - sol.y.sup_abs()).abs() < 1e-12);
    }

    #[test]
    fn unbounded_ladder_is_exact_for_bounded_data() {
        let grid = GridSpec::centered(0.0, 1.0, 100, 101, &band()).unwrap();
        // |xi| <= 0.5 <= first truncation level: every level solves the same
        // problem and the gaps vanish identically.
        let pol = Policies {
            m_schedule: vec![1.0, 2.0, 4.0],
            ..Policies::default()
        };
        let (_, diag) = solve_unbounded(
            &Payoff::custom(|x: f64| x.clamp(-0.5, 0.5), GrowthTag::Bounded),
            &GeneratorSpec::quadratic_z(0.5),
            &closed_form_loss(),
            &band(),
            &grid,
            &pol,
        )
        .unwrap();
        assert!(diag.gaps_y.iter().all(|&g| g == 0.0), "{:?}", diag.gaps_y);
        assert!(diag.gaps_a.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unbounded_ladder_gaps_decrease_for_linear_terminal() {
        let b = band();
        let grid = GridSpec::centered(0.0, 0.25, 50, 401, &b).unwrap();
        assert!(grid.x_max > 4.2, "domain must exceed the top clamp level");
        let pol = Policies {
            m_schedule: vec![0.5, 1.0, 2.0, 4.0],
            ..Policies::default()
        };
        let gen = GeneratorSpec {
            a_g: 0.1,
            gamma_g: 1.0,
            ..GeneratorSpec::zero()
        };
        // Boundary root descends through zero before the horizon so the
        // anchors of every truncation level are admissible.
        let loss = LossSpec::affine(
            LinearFn::constant(1.0),
            LinearFn::from_knots(vec![(0.0, 0.1), (0.25, -0.05)]).unwrap(),
        );
        let (sol, diag) =
            solve_unbounded(&Payoff::linear(1.0, 0.0), &gen, &loss, &b, &grid, &pol).unwrap();
        for w in diag.gaps_y.windows(2) {
            assert!(w[1] < w[0], "gaps_y {:?}", diag.gaps_y);
        }
        assert!(sol.a_total_variation() >= 0.0);
        assert_eq!(diag.theta_entries.len(), 3);
        // theta near one blows the scaled distance up roughly like 1/(1-theta).
        assert!(diag.theta_entries[2].sup_y >= diag.theta_entries[0].sup_y);
    }

    #[test]
    fn corrupted_reflector_fails_verification() {
        let grid = GridSpec::centered(0.0, 1.0, 100, 101, &band()).unwrap();
        let loss = closed_form_loss();
        let pol = Policies::default();
        let (sol, _) = solve_bounded(
            &Payoff::linear(1.0, 0.0),
            &GeneratorSpec::zero(),
            &loss,
            &band(),
            &grid,
            &pol,
        )
        .unwrap();
        let clean = verify_solution(&sol, &loss, &pol, 0.0).unwrap();
        assert!(clean.passes(2e-3, 1e-3));
        // Kink the downward reflector mid-way: it moves while its constraint
        // is far from tight, so the flatness sum picks up mass, and the step
        // now pushes both ways.
        let mut corrupted = sol.clone();
        let half = grid.n_time / 2;
        for i in half..=grid.n_time {
            corrupted.a_l[i] += 0.1;
            corrupted.a[i] -= 0.1;
        }
        let report = verify_solution(&corrupted, &loss, &pol, 0.0).unwrap();
        assert!(
            !report.passes(2e-3, 1e-3),
            "corruption went unnoticed: {report:?}"
        );
        assert!(report.flatness_l > 1e-3 * report.a_total);
        // The kinked reflector also breaks the martingale residual: the
        // field no longer matches the recursion with the corrupted A.
        assert!(report.k_residual > 0.05, "k residual {}", report.k_residual);
        assert!(clean.k_residual < 5e-3);
    }

    #[test]
    fn frozen_pair_estimates_hold() {
        // sup|y^1 - y^2| <= L1 * T * sigma_high * sup|U^1 - U^2| and the
        // reflector analogue with the 3C/c inflation.
        let b = band();
        let grid = GridSpec::centered(0.0, 1.0, 100, 101, &b).unwrap();
        let gen = GeneratorSpec {
            a_g: 0.5,
            gamma_g: 0.5,
            ..GeneratorSpec::zero()
        };
        let loss = closed_form_loss();
        let pol = Policies::default();
        let terminal = Payoff::linear(1.0, 0.0);
        let base = solve_gbsde(&terminal, &gen, &b, &grid).unwrap().y;
        let mut bumped_values = Vec::new();
        for i in 0..=grid.n_time {
            let row: Vec<f64> = base
                .slice(i)
                .iter()
                .enumerate()
                .map(|(j, v)| v + 0.3 * (grid.x_at(j)).cos() * (1.0 + grid.time_at(i)))
                .collect();
            bumped_values.push(row);
        }
        let bumped = FieldSolution::from_values(grid, b, bumped_values);
        let sup_u = field_sup_distance(&base, &bumped);

        let one = solve_frozen(&base, &terminal, &gen, &loss, &b, &grid, &pol, 0.0).unwrap();
        let two = solve_frozen(&bumped, &terminal, &gen, &loss, &b, &grid, &pol, 0.0).unwrap();

        let mut sup_y_hat: f64 = 0.0;
        for i in 0..=grid.n_time {
            let shift1 = one.a_shift(i);
            let shift2 = two.a_shift(i);
            for j in 0..grid.n_space {
                let y1 = one.y.slice(i)[j] - shift1;
                let y2 = two.y.slice(i)[j] - shift2;
                sup_y_hat = sup_y_hat.max((y1 - y2).abs());
            }
        }
        let l1 = gen.lip_y();
        let horizon = grid.t_end - grid.t_start;
        assert!(
            sup_y_hat <= l1 * horizon * b.sigma_high() * sup_u + 1e-6,
            "sup_y_hat {sup_y_hat} vs bound {}",
            l1 * horizon * b.sigma_high() * sup_u
        );
        let sup_a: f64 = one
            .a
            .iter()
            .zip(&two.a)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        // sup_t E[|y_hat_t|] is at most sup_y_hat; the bound inflates by 3C/c.
        let bound = 3.0 * loss.c_hi() / loss.c_lo() * sup_y_hat + 1e-6;
        assert!(sup_a <= bound, "sup_a {sup_a} vs {bound}");
    }
}
