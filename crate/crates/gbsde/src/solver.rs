//! Backward dynamic-programming solver for standard (unreflected) quadratic
//! G-BSDEs with Markovian terminal data.
//!
//! The scheme marches `u(t) = u(t+dt) + dt*f(t,y,z) + 2*dt*G(d_xx u / 2 +
//! g(t,y,z))` nodewise; Y is `u(t, B_t)`, Z the centered space derivative,
//! and K is recovered per scenario as the residual that turns the backward
//! recursion into an equality. Because `s*a <= 2*G(a)` for every admissible
//! variance `s`, that residual is non-increasing along every scenario by
//! construction.

use serde::{Deserialize, Serialize};

use crate::band::VolatilityBand;
use crate::engine::{g_raw, interp_row, FieldSolution};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::payoff::Payoff;
use crate::timefn::StepFn;
use crate::tree::{adapted_residual_max, Scenario};

/// Guard constant for the quadratic term: the solve refuses when
/// `dt * L2 * (1 + 2*max|Z|)` exceeds this.
pub const STABILITY_GUARD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convexity {
    #[default]
    Convex,
    Concave,
}

/// Parametric generator family
/// `f(t,y,z) = f0(t) + a_f*y + b_f*z + gamma_f/2 * z^2` and likewise for `g`.
/// The sign of the quadratic coefficients must match the convexity flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub f0: StepFn,
    pub g0: StepFn,
    pub a_f: f64,
    pub a_g: f64,
    pub b_f: f64,
    pub b_g: f64,
    pub gamma_f: f64,
    pub gamma_g: f64,
    pub convexity: Convexity,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl GeneratorSpec {
    /// The zero generator (driftless G-BSDE, i.e. plain conditional
    /// G-expectation of the terminal value).
    pub fn zero() -> Self {
        Self {
            f0: StepFn::constant(0.0),
            g0: StepFn::constant(0.0),
            a_f: 0.0,
            a_g: 0.0,
            b_f: 0.0,
            b_g: 0.0,
            gamma_f: 0.0,
            gamma_g: 0.0,
            convexity: Convexity::Convex,
        }
    }

    /// Quadratic-in-z generator on the `d<B>` integral: `g = gamma/2 * z^2`.
    pub fn quadratic_z(gamma: f64) -> Self {
        Self {
            gamma_g: gamma,
            convexity: if gamma >= 0.0 {
                Convexity::Convex
            } else {
                Convexity::Concave
            },
            ..Self::zero()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_f", self.a_f),
            ("a_g", self.a_g),
            ("b_f", self.b_f),
            ("b_g", self.b_g),
            ("gamma_f", self.gamma_f),
            ("gamma_g", self.gamma_g),
        ] {
            if !v.is_finite() {
                return Err(Error::Generator(format!("{name} must be finite")));
            }
        }
        let ok = match self.convexity {
            Convexity::Convex => self.gamma_f >= 0.0 && self.gamma_g >= 0.0,
            Convexity::Concave => self.gamma_f <= 0.0 && self.gamma_g <= 0.0,
        };
        if !ok {
            return Err(Error::Generator(
                "convexity flag contradicts the sign of the quadratic coefficients".into(),
            ));
        }
        Ok(())
    }

    pub fn f(&self, t: f64, y: f64, z: f64) -> f64 {
        self.f0.value(t) + self.a_f * y + self.b_f * z + 0.5 * self.gamma_f * z * z
    }

    pub fn g(&self, t: f64, y: f64, z: f64) -> f64 {
        self.g0.value(t) + self.a_g * y + self.b_g * z + 0.5 * self.gamma_g * z * z
    }

    /// Lipschitz constant in y: `L1 = |a_f| + |a_g|`.
    pub fn lip_y(&self) -> f64 {
        self.a_f.abs() + self.a_g.abs()
    }

    /// Local Lipschitz envelope in z: smallest `L2` with
    /// `|f(z)-f(z')| + |g(z)-g(z')| <= L2*(1+|z|+|z'|)*|z-z'|` over the family.
    pub fn lip_z(&self) -> f64 {
        self.b_f.abs().max(self.gamma_f.abs() / 2.0) + self.b_g.abs().max(self.gamma_g.abs() / 2.0)
    }

    /// Envelope intercept `alpha_t` in
    /// `|g| <= alpha_t + L2/2 + L1|y| + 3*L2/2 * |z|^2`.
    pub fn alpha(&self, t: f64) -> f64 {
        self.f0.value(t).abs() + self.g0.value(t).abs()
    }

    /// Uniform data bound: `int f0^2 + int g0^2 + sup |terminal|` over the
    /// grid domain.
    pub fn m0(&self, terminal: &Payoff, grid: &GridSpec) -> f64 {
        let sq = |f: &StepFn| f.map(|v| v * v).integral(grid.t_start, grid.t_end);
        sq(&self.f0) + sq(&self.g0) + terminal.sup_abs_on(&grid.xs())
    }

    pub fn is_zero_in_f(&self) -> bool {
        self.f0.sup_abs() == 0.0 && self.a_f == 0.0 && self.b_f == 0.0 && self.gamma_f == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationLevel(pub f64);

impl TruncationLevel {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Generator(format!(
                "truncation level must be positive and finite, got {m}"
            )));
        }
        Ok(Self(m))
    }
}

/// Two-sided truncation of the data: clamps the terminal value to `[-m, m]`
/// and shifts the generator intercept `g0` onto its clamped version, leaving
/// the rest of the generator untouched. For `m` at or above both sup norms
/// the inputs are returned unchanged.
pub fn truncate(
    gen: &GeneratorSpec,
    terminal: &Payoff,
    m: TruncationLevel,
    grid: &GridSpec,
) -> (GeneratorSpec, Payoff) {
    let m = m.0;
    let xi_sup = terminal.sup_abs_on(&grid.xs());
    let g0_sup = gen.g0.sup_abs();
    if m >= xi_sup && m >= g0_sup {
        return (gen.clone(), terminal.clone());
    }
    let mut out = gen.clone();
    out.g0 = gen.g0.clamped(m);
    (out, terminal.clamped(m))
}

/// Solution of the unreflected equation: the Y field, the Z table and the
/// data needed to reconstruct K per scenario.
#[derive(Debug, Clone)]
pub struct GBSDESolution {
    pub y: FieldSolution,
    z: Vec<Vec<f64>>,
    pub gen: GeneratorSpec,
    pub terminal: Payoff,
    frozen_y: Option<FieldSolution>,
    pub max_abs_z: f64,
}

impl GBSDESolution {
    pub fn grid(&self) -> &GridSpec {
        &self.y.grid
    }

    pub fn band(&self) -> &VolatilityBand {
        &self.y.band
    }

    pub fn z_slice(&self, time_idx: usize) -> &[f64] {
        &self.z[time_idx]
    }

    pub fn z_at(&self, time_idx: usize, x: f64) -> f64 {
        interp_row(&self.z[time_idx], &self.y.grid, x)
    }

    pub fn y_at(&self, time_idx: usize, x: f64) -> f64 {
        self.y.value_at(time_idx, x)
    }

    /// The y-argument the backward recursion actually used at a node.
    fn y_arg(&self, time_idx: usize, x: f64) -> f64 {
        match &self.frozen_y {
            Some(u) => u.value_at(time_idx, x),
            None => self.y.value_at(time_idx, x),
        }
    }

    /// Drift coefficient `a = d_xx u / 2 + g(t, y, z)` interpolated at `x` on
    /// a time slice. The K increment of a step with realized variance `s` is
    /// `dt * (s*a - 2*G(a)) <= 0`.
    pub fn drift_gap_at(&self, time_idx: usize, x: f64) -> f64 {
        let grid = &self.y.grid;
        let row = self.y.slice(time_idx);
        let dx = grid.dx();
        let n = row.len();
        let pos = ((x - grid.x_min) / dx).clamp(0.0, (n - 1) as f64);
        let i = (pos.round() as usize).clamp(1, n - 2);
        let half_dxx = 0.5 * (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (dx * dx);
        let t = grid.time_at(time_idx);
        half_dxx
            + self
                .gen
                .g(t, self.y_arg(time_idx, x), self.z_at(time_idx, x))
    }

    /// K path along a scenario sampled on the solver grid (length
    /// `n_time + 1`, starting at zero, non-increasing by construction).
    pub fn k_path(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        let grid = self.y.grid;
        if scenario.len() != grid.n_time {
            return Err(Error::GridMismatch(format!(
                "scenario length {} != n_time {}",
                scenario.len(),
                grid.n_time
            )));
        }
        let dt = grid.dt();
        let band = self.y.band;
        let mut k = Vec::with_capacity(grid.n_time + 1);
        let mut acc = 0.0;
        k.push(acc);
        let mut x = 0.0;
        for step in 0..grid.n_time {
            let a = self.drift_gap_at(step, x);
            let s = scenario.vol_sq(&band, step);
            acc += dt * (s * a - 2.0 * g_raw(a, &band));
            k.push(acc);
            x += scenario.increment(&band, dt, step);
        }
        Ok(k)
    }

    /// Max over grid pairs `s < t` and tree states of the conditional
    /// G-expectation residual `|E_s[K_t] - K_s|` at the given tree depth.
    pub fn k_martingale_residual(&self, depth: usize) -> Result<f64> {
        k_residual_from_field(&self.y, &self.gen, self.frozen_y.as_ref(), None, depth)
    }
}

/// Adapted-tree martingale residual for the K recovered from a solved field.
///
/// The increments here are the realized backward-recursion residuals on the
/// coarse tree: the expected change of the field over a tree step under a
/// volatility choice, plus the generator terms (the sign average removes the
/// Z part). For a field that solves the scheme, the adapted supremum of
/// their sums vanishes up to discretization, so the residual measures how
/// consistently the field satisfies the equation between tree times. Field
/// reads use three-point interpolation to keep interpolation bias out of the
/// differences.
pub(crate) fn k_residual_from_field(
    field: &FieldSolution,
    gen: &GeneratorSpec,
    frozen_y: Option<&FieldSolution>,
    a_path: Option<&[f64]>,
    depth: usize,
) -> Result<f64> {
    let grid = field.grid;
    let band = field.band;
    let horizon = grid.t_end - grid.t_start;
    let dt = horizon / depth as f64;
    let slice_of = |k: usize| -> usize {
        ((k as f64 * grid.n_time as f64 / depth as f64).round() as usize).min(grid.n_time)
    };
    let inc = |k: usize, x: f64, vol_sq: f64| -> f64 {
        let idx0 = slice_of(k);
        let idx1 = slice_of(k + 1);
        let row0 = field.slice(idx0);
        let row1 = field.slice(idx1);
        let h = (vol_sq * dt).sqrt();
        let expected_move = 0.5
            * (crate::engine::interp_row_quadratic(row1, &grid, x + h)
                + crate::engine::interp_row_quadratic(row1, &grid, x - h))
            - crate::engine::interp_row_quadratic(row0, &grid, x);
        let t = grid.time_at(idx0);
        let y = match frozen_y {
            Some(u) => u.value_at(idx0, x),
            None => crate::engine::interp_row_quadratic(row0, &grid, x),
        };
        let dx = grid.dx();
        let n = row0.len();
        let pos = ((x - grid.x_min) / dx).clamp(0.0, (n - 1) as f64);
        let i = (pos.round() as usize).clamp(1, n - 2);
        let z = (row0[i + 1] - row0[i - 1]) / (2.0 * dx);
        let da = a_path.map(|a| a[idx1] - a[idx0]).unwrap_or(0.0);
        expected_move + dt * (gen.f(t, y, z) + vol_sq * gen.g(t, y, z)) + da
    };
    adapted_residual_max(&band, dt, depth, &inc)
}

/// Solves the unreflected quadratic G-BSDE with terminal value `phi(B_T)`.
pub fn solve_gbsde(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    band: &VolatilityBand,
    grid: &GridSpec,
) -> Result<GBSDESolution> {
    solve_gbsde_inner(terminal, gen, None, band, grid)
}

/// Same backward recursion with the generator's y-argument frozen at an
/// externally supplied field on the same grid.
pub fn solve_gbsde_frozen(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    frozen_y: &FieldSolution,
    band: &VolatilityBand,
    grid: &GridSpec,
) -> Result<GBSDESolution> {
    if frozen_y.grid != *grid {
        return Err(Error::GridMismatch(
            "frozen field lives on a different grid".into(),
        ));
    }
    solve_gbsde_inner(terminal, gen, Some(frozen_y), band, grid)
}

fn solve_gbsde_inner(
    terminal: &Payoff,
    gen: &GeneratorSpec,
    frozen_y: Option<&FieldSolution>,
    band: &VolatilityBand,
    grid: &GridSpec,
) -> Result<GBSDESolution> {
    gen.validate()?;
    grid.validate(band)?;
    let xs = grid.xs();
    let n_time = grid.n_time;
    let n_space = grid.n_space;
    let dt = grid.dt();
    let dx = grid.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let lip_z = gen.lip_z();

    let terminal_row = terminal.sample(&xs);
    if terminal_row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("terminal payoff on the grid".into()));
    }

    let mut values = vec![Vec::new(); n_time + 1];
    let mut z = vec![Vec::new(); n_time + 1];
    z[n_time] = z_row(&terminal_row, dx);
    values[n_time] = terminal_row;

    let mut max_abs_z = z[n_time].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for n in (0..n_time).rev() {
        let t_data = grid.time_at(n + 1);
        let guard = dt * lip_z * (1.0 + 2.0 * max_abs_z);
        if guard > STABILITY_GUARD {
            return Err(Error::StabilityGuard {
                step: n,
                value: guard,
                limit: STABILITY_GUARD,
            });
        }
        let prev = &values[n + 1];
        let zprev = &z[n + 1];
        let mut row = prev.clone();
        for i in 1..n_space - 1 {
            let y_arg = match frozen_y {
                Some(u) => u.slice(n + 1)[i],
                None => prev[i],
            };
            let zi = zprev[i];
            let half_dxx = 0.5 * (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) * inv_dx2;
            let a = half_dxx + gen.g(t_data, y_arg, zi);
            row[i] = prev[i] + dt * gen.f(t_data, y_arg, zi) + 2.0 * dt * g_raw(a, band);
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: n });
        }
        let zr = z_row(&row, dx);
        max_abs_z = max_abs_z.max(zr.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        z[n] = zr;
        values[n] = row;
    }

    Ok(GBSDESolution {
        y: FieldSolution::from_values(*grid, *band, values),
        z,
        gen: gen.clone(),
        terminal: terminal.clone(),
        frozen_y: frozen_y.cloned(),
        max_abs_z,
    })
}

/// Centered differences inside, one-sided at the two boundary nodes.
fn z_row(row: &[f64], dx: f64) -> Vec<f64> {
    let n = row.len();
    let mut z = vec![0.0; n];
    z[0] = (row[1] - row[0]) / dx;
    for i in 1..n - 1 {
        z[i] = (row[i + 1] - row[i - 1]) / (2.0 * dx);
    }
    z[n - 1] = (row[n - 1] - row[n - 2]) / dx;
    z
}

/// Report of the exponential a-priori bound check: both sides of
/// `exp(p*gamma*ratio_sq*|Y_t|) <= E_t[exp(p*gamma*ratio_amp*(|xi| +
/// int_t^T beta))]` evaluated in log space at every grid node.
#[derive(Debug, Clone, Serialize)]
pub struct AprioriReport {
    /// Max over nodes of `lhs_log - rhs_log`; the bound holds when this is
    /// at most the grid slack.
    pub max_log_violation: f64,
    /// Min over nodes of `rhs_log - lhs_log` (the worst-case slack).
    pub min_log_slack: f64,
    pub p: f64,
    pub gamma: f64,
    pub nodes: usize,
}

/// Evaluates the exponential a-priori bound for a solved unreflected
/// equation; requires a positive lower band edge. `beta` is the
/// deterministic envelope `alpha_t + L2/2 + L1 * sup|Y|`.
pub fn apriori_bound_check(
    sol: &GBSDESolution,
    band: &VolatilityBand,
    p: f64,
    gamma: f64,
) -> Result<AprioriReport> {
    if !(p >= 1.0) || !(gamma > 0.0) {
        return Err(Error::Generator(format!(
            "need p >= 1 and gamma > 0, got p = {p}, gamma = {gamma}"
        )));
    }
    let ratio = band.ratio_sq()?;
    let ratio_amp = band.ratio_sq_amplified()?;
    let grid = sol.y.grid;
    let sup_y = sol.y.sup_abs();
    let l1 = sol.gen.lip_y();
    let l2 = sol.gen.lip_z();

    // RHS field: one engine solve of the exponential payoff; conditional
    // values at interior times are read from the same field.
    let terminal = sol.terminal.clone();
    let scale = p * gamma * ratio_amp;
    let rhs_payoff = Payoff::custom(
        move |x| (scale * terminal.eval(x).abs()).exp(),
        crate::payoff::GrowthTag::Exponential,
    );
    let rhs_field = crate::engine::solve_g_heat(&rhs_payoff, band, &grid)?;

    let mut max_violation = f64::NEG_INFINITY;
    let mut min_slack = f64::INFINITY;
    let mut nodes = 0;
    for n in 0..=grid.n_time {
        let t = grid.time_at(n);
        let beta_int = integral_beta(&sol.gen, l1, l2, sup_y, t, grid.t_end);
        for i in 0..grid.n_space {
            let lhs_log = p * gamma * ratio * sol.y.slice(n)[i].abs();
            let rhs_log = rhs_field.slice(n)[i].ln() + scale * beta_int;
            let v = lhs_log - rhs_log;
            max_violation = max_violation.max(v);
            min_slack = min_slack.min(-v);
            nodes += 1;
        }
    }
    Ok(AprioriReport {
        max_log_violation: max_violation,
        min_log_slack: min_slack,
        p,
        gamma,
        nodes,
    })
}

fn integral_beta(gen: &GeneratorSpec, l1: f64, l2: f64, sup_y: f64, t0: f64, t1: f64) -> f64 {
    let alpha_int = gen.f0.map(f64::abs).integral(t0, t1) + gen.g0.map(f64::abs).integral(t0, t1);
    alpha_int + (l2 / 2.0 + l1 * sup_y) * (t1 - t0)
}
