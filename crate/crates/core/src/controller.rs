//! Per-step feedback: measure the density, assemble the constraint rows for
//! the selected mode, solve the program and turn `u = d(Δb)/dz` into a
//! speed-limit profile.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};

use crate::constraints::{build_cbf_rows, build_clf_row, clf_value, CbfRow, CbfSpec, ClfSpec, ConstraintSystem};
use crate::diagram::{FundamentalDiagram, Regime};
use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};
use crate::linearize::{linearize, LinearizationPoint};
use crate::plant::PlantState;
use crate::qp::{self, QpProblem, QpStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerMode {
    Uncontrolled,
    ClfOnly,
    CbfOnly,
    ClfCbf,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 4] = [
        ControllerMode::Uncontrolled,
        ControllerMode::ClfOnly,
        ControllerMode::CbfOnly,
        ControllerMode::ClfCbf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Uncontrolled => "uncontrolled",
            ControllerMode::ClfOnly => "clf",
            ControllerMode::CbfOnly => "cbf",
            ControllerMode::ClfCbf => "clf-cbf",
        }
    }

    pub fn uses_clf(self) -> bool {
        matches!(self, ControllerMode::ClfOnly | ControllerMode::ClfCbf)
    }

    pub fn uses_cbf(self) -> bool {
        matches!(self, ControllerMode::CbfOnly | ControllerMode::ClfCbf)
    }
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode `{s}` (uncontrolled, clf, cbf, clf-cbf)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlLimits {
    /// Bounds on `u`, 1/m.
    pub u_min: f64,
    pub u_max: f64,
    /// Bounds on the realized ratio.
    pub b_min: f64,
    pub b_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            u_min: -0.005,
            u_max: 0.005,
            b_min: 0.1,
            b_max: 1.5,
        }
    }
}

impl ControlLimits {
    pub fn validate(&self, b0: f64) -> Result<()> {
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err(Error::InvalidParameter(format!(
                "need u_min < 0 < u_max, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if !(0.0 < self.b_min && self.b_min <= b0 && b0 <= self.b_max && self.b_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < b_min <= b0 <= b_max, got {} <= {b0} <= {}",
                self.b_min, self.b_max
            )));
        }
        Ok(())
    }
}

/// How the input for one step was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    /// No program solved.
    Bypass,
    Solved(QpStatus),
    /// The full program was infeasible; solved again without the stabilizing row.
    ClfDropped,
    /// The barrier rows conflict with the input box; least-violation input applied.
    Fallback,
}

impl StepStatus {
    pub fn code(self) -> i32 {
        match self {
            StepStatus::Bypass => -1,
            StepStatus::Solved(s) => s.code(),
            StepStatus::ClfDropped => 3,
            StepStatus::Fallback => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// `V = 1/2 ∫ (rho - rho_des)^2 dz`.
    pub v: f64,
    /// `min_z (λ - rho)`.
    pub min_h: f64,
    pub delta: f64,
    pub status: StepStatus,
    /// Cells whose barrier row carries a positive multiplier.
    pub active_cells: Vec<usize>,
    /// Cells where `b` hit `b_min` or `b_max`.
    pub clamp_count: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    pub u: CellField,
    pub b: CellField,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub grid: Grid,
    pub fd: FundamentalDiagram,
    pub mode: ControllerMode,
    pub b0: f64,
    pub limits: ControlLimits,
    pub clf: ClfSpec,
    pub cbf: CbfSpec,
    pub h_diag: CellField,
    pub linearization: LinearizationPoint,
    pub mean_zero: bool,
    pub delta_nonnegative: bool,
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Controller {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_cells();
        self.grid.check(&self.clf.rho_des)?;
        self.grid.check(&self.cbf.lambda)?;
        self.grid.check(&self.h_diag)?;
        self.clf.validate(self.fd.rho_max())?;
        self.cbf.validate(self.fd.rho_max())?;
        self.limits.validate(self.b0)?;
        self.linearization.validate(&self.fd)?;
        if let Some(h) = self.h_diag.iter().find(|&&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidParameter(format!("H diagonal entry {h} is not positive")));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("solver tolerance {}", self.tol)));
        }
        debug_assert_eq!(self.h_diag.len(), n);
        Ok(())
    }

    /// Barrier profile at time `t`.
    pub fn lambda_at(&self, t: f64) -> CellField {
        match &self.cbf.lambda_rate {
            Some(rate) => self.cbf.lambda.iter().zip(rate.iter()).map(|(l, r)| l + r * t).collect(),
            None => self.cbf.lambda.clone(),
        }
    }

    /// `(V, min h)` for a density profile at time `t`.
    pub fn measure(&self, rho: &[f64], t: f64) -> Result<(f64, f64)> {
        let e = CellField::from(rho.to_vec()).sub(&self.clf.rho_des)?;
        let v = clf_value(&e, &self.grid)?;
        let lambda = self.lambda_at(t);
        let min_h = lambda
            .iter()
            .zip(rho)
            .map(|(l, r)| l - r)
            .fold(f64::INFINITY, f64::min);
        Ok((v, min_h))
    }

    pub fn control_step(&self, state: &PlantState) -> Result<ControlOutput> {
        let grid = &self.grid;
        let n = grid.n_cells();
        grid.check(&state.rho)?;
        let (v, min_h) = self.measure(&state.rho, state.t)?;
        let mut diagnostics = Diagnostics {
            v,
            min_h,
            delta: 0.0,
            status: StepStatus::Bypass,
            active_cells: Vec::new(),
            clamp_count: 0,
            iterations: 0,
        };
        if self.mode == ControllerMode::Uncontrolled {
            return Ok(ControlOutput {
                u: CellField::zeros(n),
                b: CellField::constant(n, self.b0),
                diagnostics,
            });
        }

        let rho_lin = self.linearization.reference(&state.rho, &self.fd)?;
        let coeffs = linearize(&rho_lin, self.b0, &self.fd)?;
        let clf_row = if self.mode.uses_clf() {
            let e = state.rho.sub(&self.clf.rho_des)?;
            Some(build_clf_row(&e, &coeffs, &self.clf, grid)?)
        } else {
            None
        };
        let cbf_rows = if self.mode.uses_cbf() {
            let spec = CbfSpec {
                lambda: self.lambda_at(state.t),
                lambda_rate: self.cbf.lambda_rate.clone(),
                alpha: self.cbf.alpha,
            };
            // the barrier bounds absolute density
            build_cbf_rows(&state.rho, &coeffs, &spec, &CellField::zeros(n), grid)?
        } else {
            Vec::new()
        };

        let mut problem = QpProblem {
            h_diag: self.h_diag.to_vec(),
            p: self.clf.p,
            constraints: ConstraintSystem {
                n_cells: n,
                clf: clf_row,
                cbf: cbf_rows,
                u_bounds: (self.limits.u_min, self.limits.u_max),
                mean_zero: self.mean_zero.then(|| grid.dz()),
            },
            delta_nonnegative: self.delta_nonnegative,
        };
        let mut sol = qp::solve(&problem, self.tol, self.max_iter)?;
        let mut status = StepStatus::Solved(sol.status);
        let mut iterations = sol.iterations;

        if sol.status == QpStatus::Infeasible && problem.constraints.clf.is_some() && !problem.constraints.cbf.is_empty() {
            warn!("t = {}: program infeasible, dropping the stabilizing row", state.t);
            problem.constraints.clf = None;
            sol = qp::solve(&problem, self.tol, self.max_iter)?;
            iterations += sol.iterations;
            status = StepStatus::ClfDropped;
        }
        let u = if sol.status == QpStatus::Infeasible {
            warn!("t = {}: barrier rows infeasible within the input box, applying least-violation input", state.t);
            status = StepStatus::Fallback;
            least_violation(&problem.constraints.cbf, n, &self.limits)
        } else {
            if sol.status == QpStatus::MaxIterations {
                debug!("t = {}: iteration limit reached, kkt {:?}", state.t, sol.kkt);
            }
            let offset = usize::from(problem.constraints.clf.is_some());
            diagnostics.active_cells = problem
                .constraints
                .cbf
                .iter()
                .enumerate()
                .filter(|(j, _)| sol.multipliers.ineq[offset + j] > 0.0)
                .map(|(_, row)| row.cell)
                .collect();
            diagnostics.delta = sol.delta;
            sol.u
        };

        let (b, clamp_count) = ratio_profile(&u, self.b0, &coeffs.regimes, &self.limits, grid)?;
        diagnostics.status = status;
        diagnostics.clamp_count = clamp_count;
        diagnostics.iterations = iterations;
        Ok(ControlOutput { u, b, diagnostics })
    }
}

/// Per-cell input closest to satisfying each barrier row, clamped to the box.
fn least_violation(rows: &[CbfRow], n: usize, limits: &ControlLimits) -> CellField {
    let mut u = CellField::zeros(n);
    for row in rows {
        if row.coef != 0.0 && !row.holds(0.0, 0.0) {
            u[row.cell] = (row.rhs / row.coef).clamp(limits.u_min, limits.u_max);
        }
    }
    u
}

/// `b[i] = clamp(b0 + dz Σ_{j<=i} u[j], b_min, b_max)`: the ratio at the
/// downstream face of cell `i`, with `Δb = 0` at the ring origin. Returns the
/// profile and the number of clamped cells.
pub fn integrate_u_to_b(u: &[f64], b0: f64, limits: &ControlLimits, grid: &Grid) -> Result<(CellField, usize)> {
    grid.check(u)?;
    let faces = face_offsets(u, grid.dz());
    Ok(clamp_ratio(faces.iter().map(|d| b0 + d), limits))
}

/// Like [`integrate_u_to_b`], but each cell takes the face that governs the
/// flux it controls: a free-flow cell sends at its downstream face, a
/// congested cell receives at its upstream face. With this sampling the
/// per-cell input coefficient of the linearized model matches the plant's
/// demand/supply flux in both regimes.
pub fn ratio_profile(
    u: &[f64],
    b0: f64,
    regimes: &[Regime],
    limits: &ControlLimits,
    grid: &Grid,
) -> Result<(CellField, usize)> {
    grid.check(u)?;
    grid.check_len_of(regimes.len())?;
    let faces = face_offsets(u, grid.dz());
    let n = u.len();
    let cells = (0..n).map(|i| {
        let delta = match regimes[i] {
            Regime::FreeFlow => faces[i],
            // face i - 1/2; the ring origin is anchored at zero
            Regime::Congested if i == 0 => 0.0,
            Regime::Congested => faces[i - 1],
        };
        b0 + delta
    });
    Ok(clamp_ratio(cells, limits))
}

/// `Δb` at the downstream face of every cell.
fn face_offsets(u: &[f64], dz: f64) -> Vec<f64> {
    let mut acc = 0.0;
    u.iter()
        .map(|&ui| {
            acc += ui;
            acc * dz
        })
        .collect()
}

fn clamp_ratio(raw: impl Iterator<Item = f64>, limits: &ControlLimits) -> (CellField, usize) {
    let mut clamps = 0;
    let b = raw
        .map(|raw| {
            let b = raw.clamp(limits.b_min, limits.b_max);
            if b != raw {
                clamps += 1;
            }
            b
        })
        .collect();
    (b, clamps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{kmh_to_mps, veh_per_km};

    fn reference_fd() -> FundamentalDiagram {
        FundamentalDiagram::new(kmh_to_mps(72.0), veh_per_km(15.0), veh_per_km(150.0)).unwrap()
    }

    fn controller(mode: ControllerMode, rho_des: CellField) -> Controller {
        let grid = Grid::ring(1000.0, 100).unwrap();
        Controller {
            grid,
            fd: reference_fd(),
            mode,
            b0: 1.0,
            limits: ControlLimits::default(),
            clf: ClfSpec {
                rho_des,
                gamma: 0.025,
                p: 1000.0,
            },
            cbf: CbfSpec {
                lambda: CellField::constant(100, veh_per_km(40.0)),
                lambda_rate: None,
                alpha: 1.0,
            },
            h_diag: CellField::constant(100, 1.0),
            linearization: LinearizationPoint::FixedNominal {
                rho0_free: veh_per_km(10.0),
                rho0_congested: veh_per_km(50.0),
            },
            mean_zero: true,
            delta_nonnegative: false,
            tol: 1e-8,
            max_iter: None,
        }
    }

    fn state(rho: CellField) -> PlantState {
        let n = rho.len();
        PlantState::new(rho, CellField::constant(n, 1.0)).unwrap()
    }

    fn bumpy(grid: &Grid) -> CellField {
        grid.sample(|z| veh_per_km(12.0 + 10.0 * (2.0 * std::f64::consts::PI * z / 1000.0).sin()))
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ControllerMode::ALL {
            assert_eq!(m.name().parse::<ControllerMode>().unwrap(), m);
        }
        assert!("pid".parse::<ControllerMode>().is_err());
    }

    #[test]
    fn uncontrolled_bypasses_but_reports() {
        let c = controller(ControllerMode::Uncontrolled, CellField::constant(100, 0.012));
        let rho = bumpy(&c.grid);
        let out = c.control_step(&state(rho.clone())).unwrap();
        assert!(out.b.iter().all(|&b| b == 1.0));
        assert_eq!(out.diagnostics.status.code(), -1);
        assert!(out.diagnostics.v > 0.0);
        let expect_h = rho.iter().map(|r| veh_per_km(40.0) - r).fold(f64::INFINITY, f64::min);
        assert_eq!(out.diagnostics.min_h, expect_h);
    }

    #[test]
    fn clf_at_target_is_idle() {
        let c0 = controller(ControllerMode::ClfOnly, CellField::zeros(100));
        let rho = bumpy(&c0.grid);
        let c = controller(ControllerMode::ClfOnly, rho.clone());
        let out = c.control_step(&state(rho)).unwrap();
        assert!(out.u.iter().all(|&u| u == 0.0));
        assert!(out.b.iter().all(|&b| b == 1.0));
        assert_eq!(out.diagnostics.v, 0.0);
    }

    #[test]
    fn cbf_deep_inside_is_idle() {
        let c = controller(ControllerMode::CbfOnly, CellField::zeros(100));
        let out = c.control_step(&state(CellField::constant(100, veh_per_km(10.0)))).unwrap();
        assert!(out.u.iter().all(|&u| u == 0.0));
        assert!(out.diagnostics.active_cells.is_empty());
        assert_eq!(out.diagnostics.status, StepStatus::Solved(QpStatus::Optimal));
        assert_eq!(out.diagnostics.delta, 0.0);
    }

    #[test]
    fn clf_step_reduces_model_derivative() {
        let c = controller(ControllerMode::ClfOnly, CellField::constant(100, veh_per_km(12.0)));
        let rho = bumpy(&c.grid);
        let out = c.control_step(&state(rho)).unwrap();
        let d = &out.diagnostics;
        assert_eq!(d.status, StepStatus::Solved(QpStatus::Optimal));
        assert!(out.u.iter().any(|&u| u != 0.0));
        assert!(out.u.iter().sum::<f64>().abs() < 1e-12);
        assert!(out.b.iter().all(|&b| (0.1..=1.5).contains(&b)));
    }

    #[test]
    fn combined_mode_without_active_rows_matches_clf() {
        let rho_des = CellField::constant(100, veh_per_km(12.0));
        let clf = controller(ControllerMode::ClfOnly, rho_des.clone());
        let both = controller(ControllerMode::ClfCbf, rho_des);
        let rho = bumpy(&clf.grid);
        let a = clf.control_step(&state(rho.clone())).unwrap();
        let b = both.control_step(&state(rho)).unwrap();
        assert!(b.diagnostics.active_cells.is_empty());
        for (x, y) in a.u.iter().zip(b.u.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conflicting_barrier_falls_back() {
        let mut c = controller(ControllerMode::ClfCbf, CellField::zeros(100));
        // every cell far above its ceiling: each row wants u > 0, mean zero forbids it
        c.cbf.lambda = CellField::constant(100, veh_per_km(5.0));
        let out = c.control_step(&state(CellField::constant(100, veh_per_km(10.0)))).unwrap();
        assert_eq!(out.diagnostics.status, StepStatus::Fallback);
        assert_eq!(out.diagnostics.status.code(), 4);
        assert!(out.u.iter().all(|&u| u == c.limits.u_max));
    }

    #[test]
    fn b_reconstruction() {
        let g = Grid::ring(1000.0, 100).unwrap();
        let lim = ControlLimits::default();
        let (b, k) = integrate_u_to_b(&CellField::zeros(100), 1.0, &lim, &g).unwrap();
        assert!(b.iter().all(|&v| v == 1.0));
        assert_eq!(k, 0);

        let c = 1e-4;
        let (b, _) = integrate_u_to_b(&CellField::constant(100, c), 1.0, &lim, &g).unwrap();
        for (i, &v) in b.iter().enumerate() {
            let z = (i + 1) as f64 * 10.0;
            assert!((v - (1.0 + c * z)).abs() < 1e-12);
        }

        let u = g.sample(|z| 0.004 * (2.0 * std::f64::consts::PI * z / 1000.0).cos());
        let (b, _) = integrate_u_to_b(&u, 1.0, &lim, &g).unwrap();
        assert!((b[99] - 1.0).abs() < 1e-12);

        let (b, k) = integrate_u_to_b(&CellField::constant(100, 0.005), 1.0, &lim, &g).unwrap();
        assert!(k > 0);
        assert_eq!(b.max(), 1.5);
    }
}
