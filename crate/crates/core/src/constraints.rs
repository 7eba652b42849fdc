//! Affine constraints of the per-step control program: the stabilizing row
//! from `V = 1/2 ∫ e^2 dz` and one barrier row per cell from `h = λ - x`.

use crate::error::{Error, Result};
use crate::grid::{integrate, upwind_gradient, CellField, Grid};
use crate::linearize::LinearizedCoeffs;

#[derive(Clone, Debug, PartialEq)]
pub struct ClfSpec {
    /// Target density profile, veh/m.
    pub rho_des: CellField,
    /// Decay rate in `γ(V) = γ V`, 1/s.
    pub gamma: f64,
    /// Penalty on the relaxation variable.
    pub p: f64,
}

impl ClfSpec {
    pub fn validate(&self, rho_max: f64) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::InvalidParameter(format!("p must be positive, got {}", self.p)));
        }
        if let Some(r) = self.rho_des.iter().find(|&&r| !(0.0..=rho_max).contains(&r)) {
            return Err(Error::DensityDomain { rho: *r, rho_max });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbfSpec {
    /// Density ceiling λ per cell, veh/m.
    pub lambda: CellField,
    /// `∂λ/∂t` per cell; `None` for a static ceiling.
    pub lambda_rate: Option<CellField>,
    /// Gain in `α(h) = α h`, 1/s.
    pub alpha: f64,
}

impl CbfSpec {
    pub fn validate(&self, rho_max: f64) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let Some(l) = self.lambda.iter().find(|&&l| !(l > 0.0 && l <= rho_max)) {
            return Err(Error::InvalidParameter(format!(
                "barrier profile value {l} outside (0, {rho_max}]"
            )));
        }
        if let Some(rate) = &self.lambda_rate {
            Error::check_len(self.lambda.len(), rate.len())?;
            if !rate.is_finite() {
                return Err(Error::InvalidParameter("non-finite barrier rate".into()));
            }
        }
        Ok(())
    }

    /// `h = λ - x` per cell.
    pub fn barrier(&self, x: &[f64]) -> Result<CellField> {
        Error::check_len(self.lambda.len(), x.len())?;
        Ok(self.lambda.iter().zip(x).map(|(l, x)| l - x).collect())
    }
}

/// `Σ coefs[i] u[i] - δ <= rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClfRow {
    pub coefs: CellField,
    pub rhs: f64,
}

/// `coef * u[cell] <= rhs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CbfRow {
    pub cell: usize,
    pub coef: f64,
    pub rhs: f64,
}

impl CbfRow {
    pub fn holds(&self, u: f64, tol: f64) -> bool {
        self.coef * u <= self.rhs + tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem {
    pub n_cells: usize,
    pub clf: Option<ClfRow>,
    pub cbf: Vec<CbfRow>,
    /// `(u_min, u_max)`, 1/m.
    pub u_bounds: (f64, f64),
    /// Weight `dz` of the equality `Σ u[i] dz = 0`, when enforced.
    pub mean_zero: Option<f64>,
}

impl ConstraintSystem {
    pub fn validate(&self, n: usize) -> Result<()> {
        Error::check_len(n, self.n_cells)?;
        let (lo, hi) = self.u_bounds;
        if !(lo <= hi) || lo.is_nan() {
            return Err(Error::InvalidParameter(format!("empty input box [{lo}, {hi}]")));
        }
        if let Some(clf) = &self.clf {
            Error::check_len(n, clf.coefs.len())?;
            if !clf.coefs.is_finite() || !clf.rhs.is_finite() {
                return Err(Error::Solver("non-finite stabilizing row".into()));
            }
        }
        for row in &self.cbf {
            if row.cell >= n {
                return Err(Error::Dimension { expected: n, actual: row.cell + 1 });
            }
            if !(row.coef.is_finite() && row.rhs.is_finite()) {
                return Err(Error::Solver(format!("non-finite barrier row at cell {}", row.cell)));
            }
        }
        if let Some(w) = self.mean_zero {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidParameter(format!("mean-zero weight {w}")));
            }
        }
        Ok(())
    }
}

/// `V = 1/2 ∫ e^2 dz`.
pub fn clf_value(e: &[f64], grid: &Grid) -> Result<f64> {
    let sq: Vec<f64> = e.iter().map(|v| v * v).collect();
    Ok(0.5 * integrate(&sq, grid)?)
}

/// `Σ B[i] e[i] dz u[i] - δ <= -γ V`. On a ring the boundary term of `dV/dt`
/// vanishes, so there is no drift contribution.
pub fn build_clf_row(e: &[f64], coeffs: &LinearizedCoeffs, spec: &ClfSpec, grid: &Grid) -> Result<ClfRow> {
    if !grid.is_periodic() {
        return Err(Error::UnsupportedBoundary);
    }
    grid.check(e)?;
    grid.check(&coeffs.b_coef)?;
    let dz = grid.dz();
    let coefs = e.iter().zip(coeffs.b_coef.iter()).map(|(e, b)| b * e * dz).collect();
    let rhs = -spec.gamma * clf_value(e, grid)?;
    Ok(ClfRow { coefs, rhs })
}

/// One row per cell enforcing `dh/dt >= -α h` for the linearized model:
/// `B u <= α h - V ∂x/∂z + ∂λ/∂t` with `x = rho - rho_ref`.
pub fn build_cbf_rows(
    rho: &[f64],
    coeffs: &LinearizedCoeffs,
    spec: &CbfSpec,
    rho_ref: &[f64],
    grid: &Grid,
) -> Result<Vec<CbfRow>> {
    grid.check(rho)?;
    grid.check(rho_ref)?;
    grid.check(&spec.lambda)?;
    grid.check(&coeffs.v_coef)?;
    if let Some(l) = spec.lambda.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter(format!("barrier profile must be positive, got {l}")));
    }
    let x: Vec<f64> = rho.iter().zip(rho_ref).map(|(r, r0)| r - r0).collect();
    let h = spec.barrier(&x)?;
    let dxdz = upwind_gradient(&x, &coeffs.waves(), grid)?;
    let rows = (0..grid.n_cells())
        .map(|i| {
            let rate = spec.lambda_rate.as_ref().map_or(0.0, |r| r[i]);
            CbfRow {
                cell: i,
                coef: coeffs.b_coef[i],
                rhs: spec.alpha * h[i] - coeffs.v_coef[i] * dxdz[i] + rate,
            }
        })
        .collect();
    Ok(rows)
}
