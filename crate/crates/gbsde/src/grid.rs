//! Space-time grids for the explicit backward schemes.

use serde::{Deserialize, Serialize};

use crate::band::VolatilityBand;
use crate::error::{Error, Result};

/// Hard CFL bound for the explicit monotone scheme.
pub const CFL_LIMIT: f64 = 0.5;

/// Default CFL target used when a grid is derived rather than given.
pub const CFL_TARGET: f64 = 0.45;

/// Uniform grid on `[t_start, t_end] x [x_min, x_max]` with `n_time` steps
/// and `n_space` nodes. Construction enforces the CFL ratio
/// `sigma_high_sq * dt / dx^2 <= 1/2` for the band it will be used with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub n_time: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub n_space: usize,
}

impl GridSpec {
    pub fn new(
        t_start: f64,
        t_end: f64,
        n_time: usize,
        x_min: f64,
        x_max: f64,
        n_space: usize,
        band: &VolatilityBand,
    ) -> Result<Self> {
        let g = Self {
            t_start,
            t_end,
            n_time,
            x_min,
            x_max,
            n_space,
        };
        g.validate(band)?;
        Ok(g)
    }

    /// Derives the spatial step from the CFL target so that an `n_time` by
    /// `n_space` grid is admissible, and places `x = 0` on a node. The domain
    /// ends up wider than the usual six-standard-deviation rule whenever the
    /// CFL bound demands it.
    pub fn centered(
        t_start: f64,
        t_end: f64,
        n_time: usize,
        n_space: usize,
        band: &VolatilityBand,
    ) -> Result<Self> {
        if n_time == 0 || n_space < 3 {
            return Err(Error::Grid("need n_time >= 1 and n_space >= 3".into()));
        }
        let dt = (t_end - t_start) / n_time as f64;
        if !(dt > 0.0) {
            return Err(Error::Grid("need t_start < t_end".into()));
        }
        let dx = (band.sigma_high_sq * dt / CFL_TARGET).sqrt();
        let n_left = (n_space - 1) / 2;
        let n_right = n_space - 1 - n_left;
        Self::new(
            t_start,
            t_end,
            n_time,
            -(n_left as f64) * dx,
            n_right as f64 * dx,
            n_space,
            band,
        )
    }

    /// Default grid for a horizon: domain `max(6 sigma_high sqrt(T), CFL)`
    /// wide, `x = 0` on a node, CFL at the target.
    pub fn auto(t_start: f64, t_end: f64, n_time: usize, band: &VolatilityBand) -> Result<Self> {
        if n_time == 0 {
            return Err(Error::Grid("need n_time >= 1".into()));
        }
        let horizon = t_end - t_start;
        if !(horizon > 0.0) {
            return Err(Error::Grid("need t_start < t_end".into()));
        }
        let dt = horizon / n_time as f64;
        let dx = (band.sigma_high_sq * dt / CFL_TARGET).sqrt();
        let half_width = 6.0 * band.sigma_high() * horizon.sqrt();
        let n_half = (half_width / dx).ceil().max(1.0) as usize;
        Self::new(
            t_start,
            t_end,
            n_time,
            -(n_half as f64) * dx,
            n_half as f64 * dx,
            2 * n_half + 1,
            band,
        )
    }

    pub fn validate(&self, band: &VolatilityBand) -> Result<()> {
        for (name, v) in [
            ("t_start", self.t_start),
            ("t_end", self.t_end),
            ("x_min", self.x_min),
            ("x_max", self.x_max),
        ] {
            if !v.is_finite() {
                return Err(Error::Grid(format!("{name} must be finite")));
            }
        }
        if self.t_start >= self.t_end {
            return Err(Error::Grid("need t_start < t_end".into()));
        }
        if self.n_time < 1 {
            return Err(Error::Grid("need n_time >= 1".into()));
        }
        if self.x_min >= self.x_max {
            return Err(Error::Grid("need x_min < x_max".into()));
        }
        if self.n_space < 3 {
            return Err(Error::Grid("need n_space >= 3".into()));
        }
        let ratio = band.sigma_high_sq * self.dt() / (self.dx() * self.dx());
        if ratio > CFL_LIMIT + 1e-12 {
            return Err(Error::Cfl {
                ratio,
                limit: CFL_LIMIT,
            });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_time as f64
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_space - 1) as f64
    }

    pub fn time_at(&self, idx: usize) -> f64 {
        self.t_start + idx as f64 * self.dt()
    }

    pub fn x_at(&self, idx: usize) -> f64 {
        self.x_min + idx as f64 * self.dx()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_time).map(|i| self.time_at(i)).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_space).map(|i| self.x_at(i)).collect()
    }

    /// Index of the node at `x = 0`, if there is one (to absolute slack
    /// `1e-9 * dx`). Mean-constrained solves require it.
    pub fn zero_index(&self) -> Result<usize> {
        let dx = self.dx();
        let guess = (-self.x_min / dx).round();
        if guess >= 0.0 && (guess as usize) < self.n_space {
            let idx = guess as usize;
            if (self.x_at(idx)).abs() <= 1e-9 * dx {
                return Ok(idx);
            }
        }
        Err(Error::Grid(
            "grid does not place x = 0 on a node; build it with GridSpec::centered".into(),
        ))
    }

    /// CFL ratio for a band, for reporting.
    pub fn cfl_ratio(&self, band: &VolatilityBand) -> f64 {
        band.sigma_high_sq * self.dt() / (self.dx() * self.dx())
    }

    /// The sub-grid covering time indices `[i0, i1]` of this grid.
    pub fn time_window(&self, i0: usize, i1: usize) -> Result<GridSpec> {
        if i0 >= i1 || i1 > self.n_time {
            return Err(Error::Grid(format!(
                "bad time window [{i0}, {i1}] for n_time = {}",
                self.n_time
            )));
        }
        Ok(GridSpec {
            t_start: self.time_at(i0),
            t_end: self.time_at(i1),
            n_time: i1 - i0,
            x_min: self.x_min,
            x_max: self.x_max,
            n_space: self.n_space,
        })
    }
}
