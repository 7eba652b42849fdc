//! LWR traffic simulation on a ring road with variable-speed-limit control
//! synthesized from a Lyapunov stabilizing constraint and spatially varying
//! barrier constraints.

pub mod checks;
pub mod config;
pub mod constraints;
pub mod controller;
pub mod diagram;
pub mod error;
pub mod grid;
pub mod linearize;
pub mod plant;
pub mod presets;
pub mod qp;
pub mod simulation;
pub mod units;

pub use checks::{run_checks, CheckOutcome, TOL_H};
pub use config::{load_config, profile_eval, write_config, Profile, ScenarioConfig};
pub use constraints::{CbfRow, CbfSpec, ClfRow, ClfSpec, ConstraintSystem};
pub use controller::{ControlLimits, ControlOutput, Controller, ControllerMode, Diagnostics, StepStatus};
pub use diagram::{FundamentalDiagram, Regime};
pub use error::{Error, Result};
pub use grid::{CellField, Grid, Wave};
pub use linearize::{LinearizationPoint, LinearizedCoeffs};
pub use plant::{Plant, PlantState};
pub use presets::{preset, preset_names, preset_text};
pub use qp::{KktReport, QpProblem, QpSolution, QpStatus};
pub use simulation::{simulate, SimTrace, Snapshot, StepRecord};
