//! Skorokhod problem and backward Skorokhod problem with two nonlinear,
//! time-dependent, strictly increasing bi-Lipschitz reflecting boundaries.
//!
//! The state constraint is `l(t, x_t) <= 0 <= r(t, x_t)`; since both
//! functions are strictly increasing in `x` this confines `x_t` to the moving
//! band between the root of `r(t, .)` (below) and the root of `l(t, .)`
//! (above). Each step projects the free evolution onto that band, so the
//! reflector increments only while the corresponding constraint is tight,
//! which is the discrete flatness condition. The backward problem is solved
//! by time reversal of a forward problem, never by a native backward loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timefn::LinearFn;

/// Bisection budget per root.
pub const BISECT_BUDGET: usize = 128;

/// One reflecting boundary from the parametric family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundarySide {
    /// `slope * (x - center(t))`.
    Affine { slope: f64, center: LinearFn },
    /// `k1 * x + k2 * atan(x) - offset(t)`.
    Softened { k1: f64, k2: f64, offset: LinearFn },
}

impl BoundarySide {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            BoundarySide::Affine { slope, center } => slope * (x - center.value(t)),
            BoundarySide::Softened { k1, k2, offset } => k1 * x + k2 * x.atan() - offset.value(t),
        }
    }

    /// Bi-Lipschitz bounds `(c, C)` of the x-section, exact for the family.
    pub fn lip_bounds(&self) -> (f64, f64) {
        match self {
            BoundarySide::Affine { slope, .. } => (*slope, *slope),
            BoundarySide::Softened { k1, k2, .. } => (*k1, *k1 + *k2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, big_c) = self.lip_bounds();
        if !(c > 0.0) || !big_c.is_finite() {
            return Err(Error::Boundary(
                "boundary slopes must be positive and finite".into(),
            ));
        }
        if let BoundarySide::Softened { k2, .. } = self {
            if *k2 < 0.0 {
                return Err(Error::Boundary(
                    "softening weight must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The pair `(l, r)` with `l <= r`; `l` caps the state from above through
/// `l(t, x) <= 0`, `r` supports it from below through `r(t, x) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub l: BoundarySide,
    pub r: BoundarySide,
}

impl BoundaryPair {
    pub fn c_lo(&self) -> f64 {
        self.l.lip_bounds().0.min(self.r.lip_bounds().0)
    }

    pub fn c_hi(&self) -> f64 {
        self.l.lip_bounds().1.max(self.r.lip_bounds().1)
    }

    /// Checks slopes, ordering and separation on a sample lattice.
    pub fn validate(&self, times: &[f64], xs: &[f64]) -> Result<()> {
        self.l.validate()?;
        self.r.validate()?;
        let mut min_sep = f64::INFINITY;
        for &t in times {
            for &x in xs {
                min_sep = min_sep.min(self.r.eval(t, x) - self.l.eval(t, x));
            }
        }
        if !(min_sep > 0.0) {
            return Err(Error::Boundary(format!(
                "separation gap violated: min(r - l) = {min_sep} on the sample lattice"
            )));
        }
        Ok(())
    }
}

/// Continuous input path sampled on a grid (piecewise-linear between
/// samples), with the terminal anchor needed by the backward problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub anchor: Option<f64>,
}

impl InputPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::Path("need matching times and values (>= 2)".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Path("times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Path("values must be finite".into()));
        }
        Ok(Self {
            times,
            values,
            anchor: None,
        })
    }

    pub fn with_anchor(mut self, a: f64) -> Self {
        self.anchor = Some(a);
        self
    }

    pub fn sawtooth(
        t0: f64,
        t1: f64,
        n_steps: usize,
        amplitude: f64,
        periods: f64,
    ) -> Result<Self> {
        let times: Vec<f64> = (0..=n_steps)
            .map(|i| t0 + (t1 - t0) * i as f64 / n_steps as f64)
            .collect();
        let values = times
            .iter()
            .map(|&t| {
                let u = (t - t0) / (t1 - t0) * periods;
                let frac = u - u.floor();
                amplitude * (1.0 - 4.0 * (frac - 0.5).abs()) // triangle in [-1, 1]
            })
            .collect();
        Self::new(times, values)
    }

    pub fn random_walk(t0: f64, t1: f64, n_steps: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = (t1 - t0) / n_steps as f64;
        let step = scale * (3.0 * dt).sqrt();
        let mut v = 0.0;
        let mut times = Vec::with_capacity(n_steps + 1);
        let mut values = Vec::with_capacity(n_steps + 1);
        times.push(t0);
        values.push(0.0);
        for i in 1..=n_steps {
            v += rng.gen_range(-1.0..1.0) * step;
            times.push(t0 + dt * i as f64);
            values.push(v);
        }
        Self::new(times, values)
    }

    pub fn sup_distance(&self, other: &InputPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Solution `(x, K = K^r - K^l)` plus the root paths of the moving band and
/// the discrete flatness residuals.
#[derive(Debug, Clone, Serialize)]
pub struct SkorokhodSolution {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub k_r: Vec<f64>,
    pub k_l: Vec<f64>,
    /// Root of `r(t, .)`: the lower edge of the admissible band.
    pub band_lower: Vec<f64>,
    /// Root of `l(t, .)`: the upper edge of the admissible band.
    pub band_upper: Vec<f64>,
    /// `sum |l(t_i, x_i)| * dK^l_i` and the `r` analogue.
    pub flatness_l: f64,
    pub flatness_r: f64,
}

impl SkorokhodSolution {
    pub fn k_total_variation(&self) -> f64 {
        self.k_r.last().unwrap() + self.k_l.last().unwrap()
    }
}

/// Root of a strictly increasing function with known lower slope, by
/// bisection on the bracket `|root| <= |f(0)|/c + pad`.
fn increasing_root(f: &dyn Fn(f64) -> f64, c_lo: f64, xtol: f64) -> Result<f64> {
    let v0 = f(0.0);
    if v0 == 0.0 {
        return Ok(0.0);
    }
    let pad = xtol.max(1e-12);
    let radius = v0.abs() / c_lo + pad;
    let (mut lo, mut hi) = (-radius, radius);
    let (mut flo, mut fhi) = (f(lo), f(hi));
    let mut expand = 0;
    while flo > 0.0 || fhi < 0.0 {
        expand += 1;
        if expand > 60 {
            return Err(Error::RootBracket(format!(
                "no sign change in [{lo}, {hi}] (f = [{flo}, {fhi}])"
            )));
        }
        if flo > 0.0 {
            lo -= radius * (1 << expand.min(30)) as f64;
            flo = f(lo);
        }
        if fhi < 0.0 {
            hi += radius * (1 << expand.min(30)) as f64;
            fhi = f(hi);
        }
    }
    let mut iters = 0;
    while hi - lo > xtol && iters < BISECT_BUDGET {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    Ok(0.5 * (lo + hi))
}

pub(crate) struct SpCore {
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub k_r: Vec<f64>,
    pub k_l: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
    pub flatness_l: f64,
    pub flatness_r: f64,
}

/// Index-based discrete Skorokhod recursion shared by the forward and the
/// reversed (backward) problems; `l` and `r` are evaluated per step index.
pub(crate) fn sp_core(
    s: &[f64],
    l: &dyn Fn(usize, f64) -> f64,
    r: &dyn Fn(usize, f64) -> f64,
    c_lo: f64,
    tol: f64,
) -> Result<SpCore> {
    let n = s.len();
    let xtol = tol / 4.0;
    let mut x = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    let mut k_r = Vec::with_capacity(n);
    let mut k_l = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut flat_l = 0.0;
    let mut flat_r = 0.0;
    let (mut acc_r, mut acc_l) = (0.0, 0.0);
    for i in 0..n {
        let lo = increasing_root(&|v| r(i, v), c_lo, xtol)?;
        let hi = increasing_root(&|v| l(i, v), c_lo, xtol)?;
        if lo > hi {
            return Err(Error::Boundary(format!(
                "band empty at step {i}: lower root {lo} above upper root {hi}"
            )));
        }
        let free = if i == 0 {
            s[0]
        } else {
            x[i - 1] + (s[i] - s[i - 1])
        };
        let projected = free.clamp(lo, hi);
        let push = projected - free;
        if push > 0.0 {
            acc_r += push;
            flat_r += r(i, projected).abs() * push;
        } else if push < 0.0 {
            acc_l += -push;
            flat_l += l(i, projected).abs() * (-push);
        }
        x.push(projected);
        k.push(acc_r - acc_l);
        k_r.push(acc_r);
        k_l.push(acc_l);
        lower.push(lo);
        upper.push(hi);
    }
    Ok(SpCore {
        x,
        k,
        k_r,
        k_l,
        band_lower: lower,
        band_upper: upper,
        flatness_l: flat_l,
        flatness_r: flat_r,
    })
}

/// Solves the Skorokhod problem `x = s + K` with the nonlinear constraint
/// band, on the sample grid of `s`.
pub fn solve_sp(s: &InputPath, pair: &BoundaryPair, tol: f64) -> Result<SkorokhodSolution> {
    validate_for(s, pair)?;
    let times = s.times.clone();
    let core = sp_core(
        &s.values,
        &|i, x| pair.l.eval(times[i], x),
        &|i, x| pair.r.eval(times[i], x),
        pair.c_lo(),
        tol,
    )?;
    Ok(assemble(times, core))
}

/// Solves the backward Skorokhod problem
/// `x_t = a + s_T - s_t + k_T - k_t` by time reversal: the reversed input is
/// `a + s_T - s_{T-t}`, the boundaries are read at mirrored times, and the
/// reflector maps back through `k_t = kbar_T - kbar_{T-t}`.
pub fn solve_bsp(s: &InputPath, pair: &BoundaryPair, tol: f64) -> Result<SkorokhodSolution> {
    let a = s
        .anchor
        .ok_or_else(|| Error::Path("backward problem needs an anchor".into()))?;
    validate_for(s, pair)?;
    let n = s.times.len() - 1;
    let t_end = s.times[n];
    let last = s.values[n];
    if pair.l.eval(t_end, a) > tol || pair.r.eval(t_end, a) < -tol {
        return Err(Error::Anchor(format!(
            "anchor {a} violates the terminal constraint: l = {}, r = {}",
            pair.l.eval(t_end, a),
            pair.r.eval(t_end, a)
        )));
    }
    let reversed: Vec<f64> = (0..=n).map(|i| a + last - s.values[n - i]).collect();
    let times = s.times.clone();
    let core = sp_core(
        &reversed,
        &|i, x| pair.l.eval(times[n - i], x),
        &|i, x| pair.r.eval(times[n - i], x),
        pair.c_lo(),
        tol,
    )?;
    Ok(assemble_reversed(times, core))
}

pub(crate) fn assemble(times: Vec<f64>, core: SpCore) -> SkorokhodSolution {
    SkorokhodSolution {
        times,
        x: core.x,
        k: core.k,
        k_r: core.k_r,
        k_l: core.k_l,
        band_lower: core.band_lower,
        band_upper: core.band_upper,
        flatness_l: core.flatness_l,
        flatness_r: core.flatness_r,
    }
}

/// Maps a reversed-time core solution back to the forward axis.
pub(crate) fn assemble_reversed(times: Vec<f64>, core: SpCore) -> SkorokhodSolution {
    let n = times.len() - 1;
    let kr_end = core.k_r[n];
    let kl_end = core.k_l[n];
    let flip = |v: &[f64], end: f64| -> Vec<f64> { (0..=n).map(|i| end - v[n - i]).collect() };
    let k_r = flip(&core.k_r, kr_end);
    let k_l = flip(&core.k_l, kl_end);
    let k: Vec<f64> = k_r.iter().zip(&k_l).map(|(r, l)| r - l).collect();
    SkorokhodSolution {
        times,
        x: (0..=n).map(|i| core.x[n - i]).collect(),
        k,
        k_r,
        k_l,
        band_lower: (0..=n).map(|i| core.band_lower[n - i]).collect(),
        band_upper: (0..=n).map(|i| core.band_upper[n - i]).collect(),
        flatness_l: core.flatness_l,
        flatness_r: core.flatness_r,
    }
}

fn validate_for(s: &InputPath, pair: &BoundaryPair) -> Result<()> {
    let lo = s.values.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let xs: Vec<f64> = (0..=16).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect();
    pair.validate(&s.times, &xs)
}

/// Classical two-sided reflection map on a constant band `[lower, upper]`,
/// evaluated by the explicit double-supremum formula. Serves as the
/// independent oracle for the recursive solver.
pub fn classical_two_sided_map(s: &[f64], lower: f64, upper: f64) -> (Vec<f64>, Vec<f64>) {
    let a = upper - lower;
    let psi: Vec<f64> = s.iter().map(|v| v - lower).collect();
    let n = psi.len();
    let mut x = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    for i in 0..n {
        let mut running_min = f64::INFINITY;
        let mut best = f64::NEG_INFINITY;
        for u in (0..=i).rev() {
            running_min = running_min.min(psi[u]);
            best = best.max((psi[u] - a).min(running_min));
        }
        let head = (psi[0] - a).max(0.0).min(running_min);
        let xi = head.max(best);
        x.push(s[i] - xi);
        k.push(-xi);
    }
    (x, k)
}

/// Certificate comparing two solved instances against the stability bound
/// `sup|K^1 - K^2| <= (C/c) sup|s^1 - s^2| + (1/c) (Lbar v Rbar)`.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; the certificate passes when this is above `-tol`.
    pub slack: f64,
    pub c: f64,
    pub c_hi: f64,
    pub sup_input_distance: f64,
    pub boundary_distance: f64,
    pub anchor_distance: Option<f64>,
}

pub struct SolvedInstance<'a> {
    pub input: &'a InputPath,
    pub pair: &'a BoundaryPair,
    pub solution: &'a SkorokhodSolution,
}

fn boundary_distance(a: &BoundaryPair, b: &BoundaryPair, times: &[f64], xs: &[f64]) -> f64 {
    let mut d: f64 = 0.0;
    for &t in times {
        for &x in xs {
            d = d.max((a.l.eval(t, x) - b.l.eval(t, x)).abs());
            d = d.max((a.r.eval(t, x) - b.r.eval(t, x)).abs());
        }
    }
    d
}

fn check_same_grid(a: &SolvedInstance, b: &SolvedInstance) -> Result<()> {
    if a.input.times != b.input.times {
        return Err(Error::GridMismatch(
            "stability certificates need a shared time grid".into(),
        ));
    }
    Ok(())
}

pub fn stability_certificate_sp(
    one: &SolvedInstance,
    two: &SolvedInstance,
    x_lattice: &[f64],
) -> Result<StabilityReport> {
    check_same_grid(one, two)?;
    let c = one.pair.c_lo().min(two.pair.c_lo());
    let c_hi = one.pair.c_hi().max(two.pair.c_hi());
    let sup_s = one.input.sup_distance(two.input);
    let bdist = boundary_distance(one.pair, two.pair, &one.input.times, x_lattice);
    let lhs = one
        .solution
        .k
        .iter()
        .zip(&two.solution.k)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let rhs = c_hi / c * sup_s + bdist / c;
    Ok(StabilityReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        c,
        c_hi,
        sup_input_distance: sup_s,
        boundary_distance: bdist,
        anchor_distance: None,
    })
}

/// Backward variant:
/// `sup|k^1 - k^2| <= 2(C/c)|a^1 - a^2| + 4(C/c) sup|s^1 - s^2| + (2/c)(Lbar v Rbar)`.
pub fn stability_certificate_bsp(
    one: &SolvedInstance,
    two: &SolvedInstance,
    x_lattice: &[f64],
) -> Result<StabilityReport> {
    check_same_grid(one, two)?;
    let (a1, a2) = match (one.input.anchor, two.input.anchor) {
        (Some(a1), Some(a2)) => (a1, a2),
        _ => return Err(Error::Path("backward certificate needs anchors".into())),
    };
    let c = one.pair.c_lo().min(two.pair.c_lo());
    let c_hi = one.pair.c_hi().max(two.pair.c_hi());
    let sup_s = one.input.sup_distance(two.input);
    let bdist = boundary_distance(one.pair, two.pair, &one.input.times, x_lattice);
    let lhs = one
        .solution
        .k
        .iter()
        .zip(&two.solution.k)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let rhs = 2.0 * c_hi / c * (a1 - a2).abs() + 4.0 * c_hi / c * sup_s + 2.0 * bdist / c;
    Ok(StabilityReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        c,
        c_hi,
        sup_input_distance: sup_s,
        boundary_distance: bdist,
        anchor_distance: Some((a1 - a2).abs()),
    })
}
