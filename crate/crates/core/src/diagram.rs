//! Triangular fundamental diagram with a multiplicative speed-limit ratio.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    FreeFlow,
    Congested,
}

/// Triangular flow-density law. All quantities in SI (m/s, veh/m).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalDiagram {
    v_max: f64,
    rho_cr: f64,
    rho_max: f64,
    w: f64,
}

impl FundamentalDiagram {
    pub fn new(v_max: f64, rho_cr: f64, rho_max: f64) -> Result<Self> {
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "free-flow speed must be positive, got {v_max}"
            )));
        }
        if !(rho_cr.is_finite() && rho_max.is_finite() && 0.0 < rho_cr && rho_cr < rho_max) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < rho_cr < rho_max, got rho_cr = {rho_cr}, rho_max = {rho_max}"
            )));
        }
        Ok(Self {
            v_max,
            rho_cr,
            rho_max,
            w: v_max * rho_cr / (rho_max - rho_cr),
        })
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn rho_cr(&self) -> f64 {
        self.rho_cr
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    /// Congested (backward) wave speed.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Largest characteristic speed magnitude at ratio 1.
    pub fn max_wave_speed(&self) -> f64 {
        self.v_max.max(self.w)
    }

    /// Maximum flow at ratio `b`.
    pub fn capacity(&self, b: f64) -> f64 {
        b * self.v_max * self.rho_cr
    }

    pub fn check_density(&self, rho: f64) -> Result<()> {
        if (0.0..=self.rho_max).contains(&rho) {
            Ok(())
        } else {
            Err(Error::DensityDomain {
                rho,
                rho_max: self.rho_max,
            })
        }
    }

    fn check_ratio(b: f64) -> Result<()> {
        if b.is_finite() && b > 0.0 {
            Ok(())
        } else {
            Err(Error::RatioDomain(b))
        }
    }

    pub fn flow(&self, rho: f64, b: f64) -> Result<f64> {
        self.check_density(rho)?;
        Self::check_ratio(b)?;
        Ok(match self.classify(rho) {
            Regime::FreeFlow => b * self.v_max * rho,
            Regime::Congested => b * self.w * (self.rho_max - rho),
        })
    }

    /// Free flow up to and including the critical density.
    pub fn regime(&self, rho: f64) -> Result<Regime> {
        self.check_density(rho)?;
        Ok(self.classify(rho))
    }

    pub(crate) fn classify(&self, rho: f64) -> Regime {
        if rho <= self.rho_cr {
            Regime::FreeFlow
        } else {
            Regime::Congested
        }
    }

    /// Sending and receiving functions of the cell-transmission flux.
    pub fn demand_supply(&self, rho: f64, b: f64) -> Result<(f64, f64)> {
        self.check_density(rho)?;
        Self::check_ratio(b)?;
        Ok((self.demand(rho, b), self.supply(rho, b)))
    }

    #[inline]
    pub(crate) fn demand(&self, rho: f64, b: f64) -> f64 {
        b * self.v_max * rho.min(self.rho_cr)
    }

    #[inline]
    pub(crate) fn supply(&self, rho: f64, b: f64) -> f64 {
        b * self.w * (self.rho_max - rho.max(self.rho_cr))
    }
}
