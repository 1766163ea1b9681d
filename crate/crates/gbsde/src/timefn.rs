//! Small deterministic functions of time used by generators, losses and
//! reflecting boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant right-open step function given by `(time, value)`
/// knots; the value at `t` is the value of the last knot at or before `t`.
/// Before the first knot the first value applies. Serializes as the bare
/// knot list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct StepFn {
    knots: Vec<(f64, f64)>,
}

impl Default for StepFn {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for StepFn {
    type Error = Error;
    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::from_knots(knots)
    }
}

impl From<StepFn> for Vec<(f64, f64)> {
    fn from(f: StepFn) -> Self {
        f.knots
    }
}

impl StepFn {
    pub fn constant(v: f64) -> Self {
        Self {
            knots: vec![(0.0, v)],
        }
    }

    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        validate_knots(&knots)?;
        Ok(Self { knots })
    }

    pub fn value(&self, t: f64) -> f64 {
        let mut v = self.knots[0].1;
        for &(kt, kv) in &self.knots {
            if kt <= t {
                v = kv;
            } else {
                break;
            }
        }
        v
    }

    pub fn sup_abs(&self) -> f64 {
        self.knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max)
    }

    /// Integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut lo = a;
        for w in 0..self.knots.len() {
            let seg_end = if w + 1 < self.knots.len() {
                self.knots[w + 1].0.min(b)
            } else {
                b
            };
            if seg_end > lo {
                total += self.knots[w].1 * (seg_end - lo);
                lo = seg_end;
            }
            if lo >= b {
                break;
            }
        }
        if lo < b {
            total += self.knots.last().unwrap().1 * (b - lo);
        }
        total
    }

    /// Two-sided clamp of every level to `[-m, m]`.
    pub fn clamped(&self, m: f64) -> Self {
        Self {
            knots: self
                .knots
                .iter()
                .map(|&(t, v)| (t, v.clamp(-m, m)))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            knots: self.knots.iter().map(|&(t, v)| (t, f(v))).collect(),
        }
    }
}

/// Continuous piecewise-linear function given by `(time, value)` knots,
/// extended by its end values outside the knot range. Serializes as the bare
/// knot list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct LinearFn {
    knots: Vec<(f64, f64)>,
}

impl Default for LinearFn {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for LinearFn {
    type Error = Error;
    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::from_knots(knots)
    }
}

impl From<LinearFn> for Vec<(f64, f64)> {
    fn from(f: LinearFn) -> Self {
        f.knots
    }
}

impl LinearFn {
    pub fn constant(v: f64) -> Self {
        Self {
            knots: vec![(0.0, v)],
        }
    }

    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        validate_knots(&knots)?;
        Ok(Self { knots })
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = match k.binary_search_by(|p| p.0.partial_cmp(&t).unwrap()) {
            Ok(i) => return k[i].1,
            Err(i) => i,
        };
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn sup_abs(&self) -> f64 {
        self.knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max)
    }
}

fn validate_knots(knots: &[(f64, f64)]) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::Config("knot list must not be empty".into()));
    }
    for w in knots.windows(2) {
        if !(w[0].0 < w[1].0) {
            return Err(Error::Config(
                "knot times must be strictly increasing".into(),
            ));
        }
    }
    if knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
        return Err(Error::Config("knots must be finite".into()));
    }
    Ok(())
}
