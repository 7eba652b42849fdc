//! Invariant suite run against a scenario.

use std::fmt;

use crate::config::ScenarioConfig;
use crate::controller::ControllerMode;
use crate::error::Result;
use crate::grid::CellField;
use crate::plant::PlantState;
use crate::simulation::simulate;

/// Density slack allowed below the barrier, veh/m.
pub const TOL_H: f64 = 0.5e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "ok" } else { "FAILED" };
        write!(f, "{tag:6} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// Runs the scenario and the plant-level invariants it should satisfy.
pub fn run_checks(cfg: &ScenarioConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let trace = simulate(cfg)?;

    let drift = trace.mass_drift();
    out.push(outcome("conservation", drift <= 1e-10, format!("relative drift {drift:.3e}")));

    let rho_max = cfg.rho_max;
    let (lo, hi) = trace
        .snapshots
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.rho.min()), hi.max(s.rho.max())));
    out.push(outcome(
        "density bounds",
        lo >= 0.0 && hi <= rho_max,
        format!("density in [{lo:.6e}, {hi:.6e}] veh/m"),
    ));

    let again = simulate(cfg)?;
    let same = again.density_csv() == trace.density_csv()
        && again.speedlimit_csv() == trace.speedlimit_csv()
        && again.scalars_csv() == trace.scalars_csv();
    out.push(outcome("determinism", same, "two runs compared byte for byte".into()));

    if cfg.mode.uses_cbf() {
        let min_h = trace.min_h();
        out.push(outcome(
            "barrier",
            min_h >= -TOL_H,
            format!("min h {:.4} veh/km", min_h * 1000.0),
        ));
    }

    out.push(zero_ratio_closes_cell(cfg)?);
    out.push(refinement(cfg)?);
    Ok(out)
}

fn zero_ratio_closes_cell(cfg: &ScenarioConfig) -> Result<CheckOutcome> {
    let (plant, _, state) = cfg.build()?;
    let mut b = CellField::constant(state.rho.len(), cfg.b0);
    let cell = state.rho.len() / 2;
    b[cell] = 0.0;
    let before = state.rho[cell];
    let next = plant.godunov_step(&PlantState::new(state.rho, b)?, cfg.dt)?;
    Ok(outcome(
        "zero ratio",
        next.rho[cell] == before,
        format!("cell {cell} density {before:.6e} -> {:.6e}", next.rho[cell]),
    ))
}

/// Uncontrolled runs at n, 2n and 4n cells; the coarse-fine L1 gap must shrink.
fn refinement(cfg: &ScenarioConfig) -> Result<CheckOutcome> {
    let horizon = cfg.horizon.min(20.0);
    let finals: Vec<(usize, Vec<f64>)> = [1usize, 2, 4]
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.mode = ControllerMode::Uncontrolled;
            c.cells = cfg.cells * k;
            c.dt = cfg.dt / k as f64;
            c.horizon = horizon;
            c.output_every = horizon.max(c.dt);
            let tr = simulate(&c)?;
            let (_, _, state) = c.build()?;
            let last = tr.snapshots.last().map_or(state.rho, |s| s.rho.clone());
            Ok((k, last.into_vec()))
        })
        .collect::<Result<_>>()?;
    let gap = |coarse: &[f64], fine: &[f64]| -> f64 {
        let r = fine.len() / coarse.len();
        let w = cfg.length / coarse.len() as f64;
        coarse
            .iter()
            .enumerate()
            .map(|(i, c)| (c - fine[i * r..(i + 1) * r].iter().sum::<f64>() / r as f64).abs() * w)
            .sum()
    };
    let coarse = gap(&finals[0].1, &finals[1].1);
    let fine = gap(&finals[1].1, &finals[2].1);
    Ok(outcome(
        "refinement",
        fine < coarse,
        format!("L1 gap {coarse:.4e} (n vs 2n), {fine:.4e} (2n vs 4n) vehicles"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_passes() {
        let cfg = ScenarioConfig {
            horizon: 10.0,
            ..ScenarioConfig::default()
        };
        for c in run_checks(&cfg).unwrap() {
            assert!(c.passed, "{c}");
        }
    }
}
