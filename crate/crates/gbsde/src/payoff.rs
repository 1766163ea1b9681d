//! Terminal payoffs from a named parametric family, plus piecewise-linear
//! interpolants used to chain solves across sub-intervals.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthTag {
    Bounded,
    Linear,
    Exponential,
}

/// Named payoff family available from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PayoffKind {
    Linear { slope: f64, intercept: f64 },
    Quadratic { a: f64, b: f64, c: f64 },
    Call { strike: f64 },
    Put { strike: f64 },
    Exp { rate: f64, scale: f64 },
    Piecewise { knots: Vec<(f64, f64)> },
}

impl PayoffKind {
    fn eval(&self, x: f64) -> f64 {
        match self {
            PayoffKind::Linear { slope, intercept } => slope * x + intercept,
            PayoffKind::Quadratic { a, b, c } => a * x * x + b * x + c,
            PayoffKind::Call { strike } => (x - strike).max(0.0),
            PayoffKind::Put { strike } => (strike - x).max(0.0),
            PayoffKind::Exp { rate, scale } => scale * (rate * x).exp(),
            PayoffKind::Piecewise { knots } => piecewise_eval(knots, x),
        }
    }

    fn default_growth(&self) -> GrowthTag {
        match self {
            PayoffKind::Linear { .. } | PayoffKind::Call { .. } | PayoffKind::Put { .. } => {
                GrowthTag::Linear
            }
            PayoffKind::Quadratic { .. } | PayoffKind::Piecewise { .. } => GrowthTag::Linear,
            PayoffKind::Exp { .. } => GrowthTag::Exponential,
        }
    }
}

/// Linear interpolation with linear extension beyond the end knots, so the
/// asymptotic slope is well defined for boundary freezing.
fn piecewise_eval(knots: &[(f64, f64)], x: f64) -> f64 {
    let n = knots.len();
    if n == 1 {
        return knots[0].1;
    }
    let seg = |i: usize| {
        let (x0, y0) = knots[i];
        let (x1, y1) = knots[i + 1];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    };
    if x <= knots[0].0 {
        return seg(0);
    }
    if x >= knots[n - 1].0 {
        return seg(n - 2);
    }
    let i = match knots.binary_search_by(|p| p.0.partial_cmp(&x).unwrap()) {
        Ok(i) => return knots[i].1,
        Err(i) => i,
    };
    seg(i - 1)
}

#[derive(Clone)]
enum Eval {
    Named(PayoffKind),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A terminal payoff `x -> phi(x)` with a declared growth class.
#[derive(Clone)]
pub struct Payoff {
    eval: Eval,
    growth: GrowthTag,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.eval {
            Eval::Named(k) => write!(f, "Payoff({k:?}, {:?})", self.growth),
            Eval::Custom(_) => write!(f, "Payoff(<custom>, {:?})", self.growth),
        }
    }
}

impl Payoff {
    pub fn from_kind(kind: PayoffKind) -> Self {
        let growth = kind.default_growth();
        Self {
            eval: Eval::Named(kind),
            growth,
        }
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::from_kind(PayoffKind::Linear { slope, intercept })
    }

    pub fn quadratic(a: f64, b: f64, c: f64) -> Self {
        Self::from_kind(PayoffKind::Quadratic { a, b, c })
    }

    pub fn call(strike: f64) -> Self {
        Self::from_kind(PayoffKind::Call { strike })
    }

    pub fn put(strike: f64) -> Self {
        Self::from_kind(PayoffKind::Put { strike })
    }

    pub fn exp(rate: f64, scale: f64) -> Self {
        Self::from_kind(PayoffKind::Exp { rate, scale })
    }

    pub fn piecewise(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("payoff knots must not be empty".into()));
        }
        for w in knots.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::Config(
                    "payoff knot abscissae must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self::from_kind(PayoffKind::Piecewise { knots }))
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static, growth: GrowthTag) -> Self {
        Self {
            eval: Eval::Custom(Arc::new(f)),
            growth,
        }
    }

    /// Piecewise-linear interpolant through samples; used to hand a solved
    /// field slice to the next backward sub-interval.
    pub fn from_samples(xs: &[f64], values: &[f64], growth: GrowthTag) -> Result<Self> {
        if xs.len() != values.len() {
            return Err(Error::Config("sample length mismatch".into()));
        }
        let mut p = Self::piecewise(xs.iter().copied().zip(values.iter().copied()).collect())?;
        p.growth = growth;
        Ok(p)
    }

    pub fn with_growth(mut self, growth: GrowthTag) -> Self {
        self.growth = growth;
        self
    }

    pub fn growth(&self) -> GrowthTag {
        self.growth
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.eval {
            Eval::Named(k) => k.eval(x),
            Eval::Custom(f) => f(x),
        }
    }

    /// Two-sided clamp to `[-m, m]`.
    pub fn clamped(&self, m: f64) -> Payoff {
        let inner = self.clone();
        Payoff {
            eval: Eval::Custom(Arc::new(move |x| inner.eval(x).clamp(-m, m))),
            growth: GrowthTag::Bounded,
        }
    }

    /// Max of `|phi|` over grid nodes; the working notion of the sup norm on
    /// the truncated domain.
    pub fn sup_abs_on(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.eval(x).abs()).fold(0.0, f64::max)
    }

    pub fn sample(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_family_evaluates() {
        assert_eq!(Payoff::linear(2.0, 1.0).eval(3.0), 7.0);
        assert_eq!(Payoff::quadratic(1.0, 0.0, 0.0).eval(-2.0), 4.0);
        assert_eq!(Payoff::call(1.0).eval(0.5), 0.0);
        assert_eq!(Payoff::call(1.0).eval(2.5), 1.5);
        assert_eq!(Payoff::put(0.0).eval(-2.0), 2.0);
        assert!((Payoff::exp(1.0, 2.0).eval(0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn piecewise_extends_linearly() {
        let p = Payoff::piecewise(vec![(-1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!(p.eval(-0.5), 0.5);
        assert_eq!(p.eval(0.5), 1.0);
        // beyond the ends the edge segment slope continues
        assert_eq!(p.eval(-2.0), -1.0);
        assert_eq!(p.eval(3.0), 1.0);
    }

    #[test]
    fn clamp_is_a_two_sided_cutoff() {
        let p = Payoff::linear(1.0, 0.0).clamped(1.0);
        assert_eq!(p.eval(0.3), 0.3);
        assert_eq!(p.eval(5.0), 1.0);
        assert_eq!(p.eval(-5.0), -1.0);
    }
}
