//! Closed-loop time stepping and the recorded trace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;

use crate::config::ScenarioConfig;
use crate::controller::{ControlOutput, Controller, StepStatus};
use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};
use crate::plant::{Plant, PlantState};

/// Controller and plant quantities at one plant step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub v: f64,
    pub min_h: f64,
    pub delta: f64,
    pub status: StepStatus,
    pub clamp_count: usize,
    pub active_rows: usize,
    /// Largest applied ratio over the cells whose barrier row is active.
    pub max_b_active: Option<f64>,
    pub vehicles: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub rho: CellField,
    pub b: CellField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub grid: Grid,
    pub dt: f64,
    pub b0: f64,
    pub stride: usize,
    /// One per plant step plus the final state.
    pub steps: Vec<StepRecord>,
    /// Every `stride` steps, starting at t = 0.
    pub snapshots: Vec<Snapshot>,
}

impl SimTrace {
    pub fn initial_v(&self) -> f64 {
        self.steps[0].v
    }

    pub fn final_v(&self) -> f64 {
        self.steps[self.steps.len() - 1].v
    }

    /// `min over t of min_z h`.
    pub fn min_h(&self) -> f64 {
        self.steps.iter().map(|s| s.min_h).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_delta(&self) -> f64 {
        self.steps.iter().map(|s| s.delta.abs()).fold(0.0, f64::max)
    }

    /// `∫ |δ| dt` over the applied steps.
    pub fn delta_integral(&self) -> f64 {
        let n = self.steps.len().saturating_sub(1);
        self.steps[..n].iter().map(|s| s.delta.abs() * self.dt).sum()
    }

    /// Largest relative drift of the vehicle count from its initial value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.steps[0].vehicles;
        self.steps
            .iter()
            .map(|s| ((s.vehicles - m0) / m0).abs())
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        format!(
            "final V = {:.6e}, min h = {:.6e} veh/m, max |delta| = {:.6e}",
            self.final_v(),
            self.min_h(),
            self.max_abs_delta()
        )
    }

    fn field_csv(&self, pick: impl Fn(&Snapshot) -> &CellField) -> String {
        let mut out = String::from("t");
        for i in 0..self.grid.n_cells() {
            let _ = write!(out, ",z_{i}");
        }
        out.push('\n');
        for s in &self.snapshots {
            let _ = write!(out, "{:.16e}", s.t);
            for v in pick(s).iter() {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn density_csv(&self) -> String {
        self.field_csv(|s| &s.rho)
    }

    pub fn speedlimit_csv(&self) -> String {
        self.field_csv(|s| &s.b)
    }

    /// Scalar series at the snapshot times.
    pub fn scalars_csv(&self) -> String {
        let mut out = String::from("t,V,min_h,delta,qp_status,clamp_count\n");
        for rec in self.steps.iter().step_by(self.stride) {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                rec.t,
                rec.v,
                rec.min_h,
                rec.delta,
                rec.status.code(),
                rec.clamp_count
            );
        }
        out
    }

    /// Writes `density.csv`, `speedlimit.csv` and `scalars.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, body) in [
            ("density.csv", self.density_csv()),
            ("speedlimit.csv", self.speedlimit_csv()),
            ("scalars.csv", self.scalars_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// Runs the scenario described by `cfg` to its horizon.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimTrace> {
    let scoped = |e: Error| e.in_scenario(&cfg.name);
    let (plant, controller, state) = cfg.build().map_err(scoped)?;
    run(&plant, &controller, state, cfg.dt, cfg.steps(), cfg.control_interval, cfg.output_stride()).map_err(scoped)
}

/// Alternates controller updates (every `control_interval` steps, held in
/// between) with plant steps.
pub fn run(
    plant: &Plant,
    controller: &Controller,
    mut state: PlantState,
    dt: f64,
    steps: usize,
    control_interval: usize,
    stride: usize,
) -> Result<SimTrace> {
    let grid = plant.grid;
    let t0 = state.t;
    let mut trace = SimTrace {
        grid,
        dt,
        b0: controller.b0,
        stride,
        steps: Vec::with_capacity(steps + 1),
        snapshots: Vec::with_capacity(steps / stride + 1),
    };
    let mut held: Option<ControlOutput> = None;
    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        state.t = t;
        let refresh = k % control_interval.max(1) == 0 || held.is_none();
        let out = if refresh {
            let out = controller.control_step(&state).map_err(|e| e.at_time(t))?;
            held = Some(out.clone());
            out
        } else {
            let mut out = held.clone().expect("held control");
            let (v, min_h) = controller.measure(&state.rho, t).map_err(|e| e.at_time(t))?;
            out.diagnostics.v = v;
            out.diagnostics.min_h = min_h;
            out
        };
        state.b = out.b;
        let d = out.diagnostics;
        let max_b_active = d
            .active_cells
            .iter()
            .map(|&i| state.b[i])
            .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.max(b))));
        trace.steps.push(StepRecord {
            t,
            v: d.v,
            min_h: d.min_h,
            delta: d.delta,
            status: d.status,
            clamp_count: d.clamp_count,
            active_rows: d.active_cells.len(),
            max_b_active,
            vehicles: state.vehicles(&grid)?,
        });
        if k % stride == 0 {
            trace.snapshots.push(Snapshot {
                t,
                rho: state.rho.clone(),
                b: state.b.clone(),
            });
        }
        if k < steps {
            state = plant.godunov_step(&state, dt).map_err(|e| e.at_time(t))?;
        }
    }
    info!("{}", trace.summary());
    Ok(trace)
}
