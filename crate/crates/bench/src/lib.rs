//! Fixtures shared by the benchmarks.

use lwr_vsl::{preset, CbfRow, ClfRow, ConstraintSystem, Controller, Plant, PlantState, QpProblem, Result};

/// Plant, controller and the state reached after `t` seconds of the preset's
/// own closed loop.
pub fn state_at(name: &str, t: f64) -> Result<(Plant, Controller, PlantState)> {
    let cfg = preset(name)?;
    let (plant, controller, mut state) = cfg.build()?;
    let steps = (t / cfg.dt).round() as usize;
    for k in 0..steps {
        state.t = k as f64 * cfg.dt;
        state.b = controller.control_step(&state)?.b;
        state = plant.godunov_step(&state, cfg.dt)?;
    }
    state.t = steps as f64 * cfg.dt;
    Ok((plant, controller, state))
}

/// A 100-cell program shaped like a closed-loop step: one stabilizing row,
/// a band of tight barrier rows and the mean-zero equality.
pub fn synthetic_problem(n: usize) -> QpProblem {
    let coefs = (0..n)
        .map(|i| {
            let z = i as f64 / n as f64;
            -0.2 * (2.0 * std::f64::consts::PI * z).sin() * 0.1
        })
        .collect();
    let cbf = (0..n)
        .map(|i| CbfRow {
            cell: i,
            coef: -0.2,
            rhs: if (n * 9 / 10..n * 97 / 100).contains(&i) { -2e-4 } else { 1e-3 },
        })
        .collect();
    QpProblem {
        h_diag: vec![1.0; n],
        p: 1000.0,
        constraints: ConstraintSystem {
            n_cells: n,
            clf: Some(ClfRow { coefs, rhs: -1e-3 }),
            cbf,
            u_bounds: (-0.005, 0.005),
            mean_zero: Some(1000.0 / n as f64),
        },
        delta_nonnegative: false,
    }
}
