//! Per-cell coefficients of the linearized LWR model
//! `dx/dt = V dx/dz + M x + B u` with `x = rho - rho0`, `u = d(Δb)/dz`.

use crate::diagram::{FundamentalDiagram, Regime};
use crate::error::{Error, Result};
use crate::grid::{CellField, Wave};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedCoeffs {
    /// Advection coefficient V, m/s.
    pub v_coef: CellField,
    /// Input coefficient B, veh/s per unit of u.
    pub b_coef: CellField,
    pub regimes: Vec<Regime>,
}

impl LinearizedCoeffs {
    /// The reaction coefficient of the triangular diagram vanishes.
    pub fn m_coef(&self) -> f64 {
        0.0
    }

    /// Upwind direction per cell for discretizing `V dx/dz`.
    pub fn waves(&self) -> Vec<Wave> {
        self.v_coef.iter().map(|&v| Wave::from_advection(v)).collect()
    }
}

/// Linearizes about `rho_ref` (per cell) and the nominal ratio `b0`.
pub fn linearize(rho_ref: &[f64], b0: f64, fd: &FundamentalDiagram) -> Result<LinearizedCoeffs> {
    if !(b0.is_finite() && b0 > 0.0) {
        return Err(Error::RatioDomain(b0));
    }
    let n = rho_ref.len();
    let mut v_coef = CellField::zeros(n);
    let mut b_coef = CellField::zeros(n);
    let mut regimes = Vec::with_capacity(n);
    for (i, &rho0) in rho_ref.iter().enumerate() {
        let regime = fd.regime(rho0)?;
        let (v, b) = match regime {
            Regime::FreeFlow => (-fd.v_max() * b0, -fd.v_max() * rho0),
            Regime::Congested => (fd.w() * b0, -fd.w() * (fd.rho_max() - rho0)),
        };
        v_coef[i] = v;
        b_coef[i] = b;
        regimes.push(regime);
    }
    Ok(LinearizedCoeffs {
        v_coef,
        b_coef,
        regimes,
    })
}

/// Where each cell is linearized. The regime is always taken from the current
/// plant density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearizationPoint {
    /// One nominal density per regime.
    FixedNominal { rho0_free: f64, rho0_congested: f64 },
    /// The current cell density itself.
    Successive,
}

impl LinearizationPoint {
    pub fn validate(&self, fd: &FundamentalDiagram) -> Result<()> {
        if let LinearizationPoint::FixedNominal {
            rho0_free,
            rho0_congested,
        } = *self
        {
            if fd.regime(rho0_free)? != Regime::FreeFlow {
                return Err(Error::InvalidParameter(format!(
                    "free-flow nominal density {rho0_free} is above rho_cr"
                )));
            }
            if fd.regime(rho0_congested)? != Regime::Congested {
                return Err(Error::InvalidParameter(format!(
                    "congested nominal density {rho0_congested} is not above rho_cr"
                )));
            }
        }
        Ok(())
    }

    /// Per-cell linearization densities for the plant density `rho`.
    pub fn reference(&self, rho: &[f64], fd: &FundamentalDiagram) -> Result<CellField> {
        rho.iter()
            .map(|&r| {
                Ok(match *self {
                    LinearizationPoint::Successive => {
                        fd.check_density(r)?;
                        r
                    }
                    LinearizationPoint::FixedNominal {
                        rho0_free,
                        rho0_congested,
                    } => match fd.regime(r)? {
                        Regime::FreeFlow => rho0_free,
                        Regime::Congested => rho0_congested,
                    },
                })
            })
            .collect()
    }
}
