//! Volatility ambiguity interval and the sublinear function G it generates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ambiguity interval `[sigma_low_sq, sigma_high_sq]` of variance per
/// unit time. It defines `G(a) = (sigma_high_sq*a^+ - sigma_low_sq*a^-) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolatilityBand {
    pub sigma_low_sq: f64,
    pub sigma_high_sq: f64,
}

impl VolatilityBand {
    pub fn new(sigma_low_sq: f64, sigma_high_sq: f64) -> Result<Self> {
        if !sigma_low_sq.is_finite() || !sigma_high_sq.is_finite() {
            return Err(Error::Band("variances must be finite".into()));
        }
        if sigma_low_sq < 0.0 {
            return Err(Error::Band(format!(
                "sigma_low_sq = {sigma_low_sq} must be nonnegative"
            )));
        }
        if sigma_low_sq >= sigma_high_sq {
            return Err(Error::Band(format!(
                "need sigma_low_sq < sigma_high_sq, got [{sigma_low_sq}, {sigma_high_sq}]"
            )));
        }
        Ok(Self {
            sigma_low_sq,
            sigma_high_sq,
        })
    }

    pub fn sigma_low(&self) -> f64 {
        self.sigma_low_sq.sqrt()
    }

    pub fn sigma_high(&self) -> f64 {
        self.sigma_high_sq.sqrt()
    }

    /// The variance contrast `(sigma_high / sigma_low)^2`, undefined when the
    /// lower edge of the band is zero.
    pub fn ratio_sq(&self) -> Result<f64> {
        if self.sigma_low_sq == 0.0 {
            return Err(Error::UndefinedBandRatio);
        }
        Ok(self.sigma_high_sq / self.sigma_low_sq)
    }

    /// `ratio_sq * max(sigma_high_sq, 1)`, the amplified contrast entering
    /// exponential a-priori bounds and small-interval conditions.
    pub fn ratio_sq_amplified(&self) -> Result<f64> {
        Ok(self.ratio_sq()? * self.sigma_high_sq.max(1.0))
    }
}
