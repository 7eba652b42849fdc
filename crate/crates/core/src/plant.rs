//! Nonlinear LWR plant advanced by a Godunov (cell-transmission) scheme on a
//! ring road.

use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};
use crate::grid::{integrate, CellField, Grid};

pub const DEFAULT_CFL: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    /// Density per cell, veh/m.
    pub rho: CellField,
    /// Speed-limit ratio per cell.
    pub b: CellField,
    /// Simulation time, s.
    pub t: f64,
}

impl PlantState {
    pub fn new(rho: CellField, b: CellField) -> Result<Self> {
        Error::check_len(rho.len(), b.len())?;
        Ok(Self { rho, b, t: 0.0 })
    }

    /// Total number of vehicles on the road.
    pub fn vehicles(&self, grid: &Grid) -> Result<f64> {
        integrate(&self.rho, grid)
    }
}

/// Plant configuration: the road, its diagram and the CFL policy.
#[derive(Clone, Copy, Debug)]
pub struct Plant {
    pub grid: Grid,
    pub fd: FundamentalDiagram,
    pub b_max: f64,
    pub cfl_number: f64,
}

impl Plant {
    pub fn new(grid: Grid, fd: FundamentalDiagram, b_max: f64, cfl_number: f64) -> Result<Self> {
        if !(cfl_number > 0.0 && cfl_number <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CFL number must lie in (0, 1], got {cfl_number}"
            )));
        }
        if !(b_max.is_finite() && b_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "b_max must be positive, got {b_max}"
            )));
        }
        Ok(Self {
            grid,
            fd,
            b_max,
            cfl_number,
        })
    }

    /// Largest stable step. The triangular diagram has density-independent
    /// wave speeds, so the bound only depends on the ratio ceiling.
    pub fn cfl_max_dt(&self) -> f64 {
        self.cfl_number * self.grid.dz() / (self.b_max * self.fd.max_wave_speed())
    }

    /// Conservative update with interface flux
    /// `F[i+1/2] = min(demand(rho[i], b[i]), supply(rho[i+1], b[i+1]))`.
    pub fn godunov_step(&self, state: &PlantState, dt: f64) -> Result<PlantState> {
        if !self.grid.is_periodic() {
            return Err(Error::UnsupportedBoundary);
        }
        let max_dt = self.cfl_max_dt();
        if !(dt >= 0.0 && dt <= max_dt * (1.0 + 1e-12)) {
            return Err(Error::StepRejected { dt, max_dt });
        }
        self.grid.check(&state.rho)?;
        self.grid.check(&state.b)?;
        if let Some(&b) = state
            .b
            .iter()
            .find(|&&b| !(b >= 0.0 && b <= self.b_max * (1.0 + 1e-12)))
        {
            return Err(Error::InvalidParameter(format!(
                "speed-limit ratio {b} outside [0, {}]",
                self.b_max
            )));
        }

        let n = self.grid.n_cells();
        let fd = &self.fd;
        let (rho, b) = (&state.rho, &state.b);
        // flux[i] sits on the interface between cell i and cell i+1
        let flux: Vec<f64> = (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                fd.demand(rho[i], b[i]).min(fd.supply(rho[j], b[j]))
            })
            .collect();
        let r = dt / self.grid.dz();
        let mut next = CellField::zeros(n);
        for i in 0..n {
            let inflow = flux[(i + n - 1) % n];
            let v = rho[i] - r * (flux[i] - inflow);
            if !(0.0..=fd.rho_max()).contains(&v) {
                return Err(Error::InvariantViolated { cell: i, rho: v });
            }
            next[i] = v;
        }
        Ok(PlantState {
            rho: next,
            b: state.b.clone(),
            t: state.t + dt,
        })
    }
}
