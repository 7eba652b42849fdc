//! Scenario description in a flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Numeric values may carry a unit
//! suffix (`veh/km`, `veh/m`, `km/h`, `m/s`, `m`, `s`, `1/m`); without one
//! they are read as SI. Profiles are sums of primitives:
//!
//! ```text
//! constant(c)
//! pwconst(z0:v0, z1:v1, ...)     # v_k on [z_k, z_k+1), z0 = 0
//! pwlinear(z0:v0, z1:v1, ...)    # linear between knots, flat outside
//! bump(base, peak, center, half_width)   # raised cosine, periodic
//! ```
//!
//! joined with `+`, followed by an optional density unit that applies to
//! every value (positions are always meters), e.g.
//! `rho_init = constant(10) + bump(0, 40, 500, 100) veh/km`.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::constraints::{CbfSpec, ClfSpec};
use crate::controller::{ControlLimits, Controller, ControllerMode};
use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};
use crate::linearize::LinearizationPoint;
use crate::plant::{Plant, PlantState};

#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Constant(f64),
    PwConst(Vec<(f64, f64)>),
    PwLinear(Vec<(f64, f64)>),
    Bump {
        base: f64,
        peak: f64,
        center: f64,
        half_width: f64,
    },
    Sum(Vec<Profile>),
}

impl Profile {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let (body, scale) = strip_density_unit(text.trim());
        let terms = split_top_level(body, '+')?;
        let mut parts: Vec<Profile> = terms.iter().map(|t| parse_term(t.trim())).collect::<std::result::Result<_, _>>()?;
        for p in &mut parts {
            p.scale_values(scale);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Profile::Sum(parts)
        })
    }

    fn scale_values(&mut self, divisor: f64) {
        if divisor == 1.0 {
            return;
        }
        match self {
            Profile::Constant(c) => *c /= divisor,
            Profile::PwConst(k) | Profile::PwLinear(k) => k.iter_mut().for_each(|(_, v)| *v /= divisor),
            Profile::Bump { base, peak, .. } => {
                *base /= divisor;
                *peak /= divisor;
            }
            Profile::Sum(parts) => parts.iter_mut().for_each(|p| p.scale_values(divisor)),
        }
    }

    /// Value at position `z` on a ring of length `length`.
    pub fn value_at(&self, z: f64, length: f64) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::PwConst(knots) => knots
                .iter()
                .take_while(|(zk, _)| *zk <= z)
                .last()
                .map_or(knots[0].1, |&(_, v)| v),
            Profile::PwLinear(knots) => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if z <= first.0 {
                    return first.1;
                }
                if z >= last.0 {
                    return last.1;
                }
                let k = knots.windows(2).find(|w| z < w[1].0).expect("z inside knot range");
                let (z0, v0) = k[0];
                let (z1, v1) = k[1];
                v0 + (v1 - v0) * (z - z0) / (z1 - z0)
            }
            Profile::Bump {
                base,
                peak,
                center,
                half_width,
            } => {
                let d = (z - center).rem_euclid(length);
                let d = d.min(length - d);
                if d >= *half_width {
                    *base
                } else {
                    base + (peak - base) * 0.5 * (1.0 + (std::f64::consts::PI * d / half_width).cos())
                }
            }
            Profile::Sum(parts) => parts.iter().map(|p| p.value_at(z, length)).sum(),
        }
    }

    fn check_positions(&self, length: f64) -> std::result::Result<(), String> {
        let in_range = |z: f64| (0.0..=length).contains(&z);
        match self {
            Profile::Constant(_) => Ok(()),
            Profile::PwConst(k) | Profile::PwLinear(k) => match k.iter().find(|(z, _)| !in_range(*z)) {
                Some((z, _)) => Err(format!("position {z} m outside [0, {length}]")),
                None => Ok(()),
            },
            Profile::Bump { center, half_width, .. } => {
                if !in_range(*center) {
                    Err(format!("bump center {center} m outside [0, {length}]"))
                } else if *half_width > 0.5 * length {
                    Err(format!("bump half width {half_width} m exceeds half the road"))
                } else {
                    Ok(())
                }
            }
            Profile::Sum(parts) => parts.iter().try_for_each(|p| p.check_positions(length)),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let knots = |f: &mut fmt::Formatter<'_>, k: &[(f64, f64)]| {
            let s: Vec<String> = k.iter().map(|(z, v)| format!("{z}:{v}")).collect();
            f.write_str(&s.join(", "))
        };
        match self {
            Profile::Constant(c) => write!(f, "constant({c})"),
            Profile::PwConst(k) => {
                f.write_str("pwconst(")?;
                knots(f, k)?;
                f.write_str(")")
            }
            Profile::PwLinear(k) => {
                f.write_str("pwlinear(")?;
                knots(f, k)?;
                f.write_str(")")
            }
            Profile::Bump {
                base,
                peak,
                center,
                half_width,
            } => write!(f, "bump({base}, {peak}, {center}, {half_width})"),
            Profile::Sum(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

fn strip_density_unit(text: &str) -> (&str, f64) {
    // divisors, so that 10 veh/km is exactly 0.01 veh/m
    for (unit, s) in [("veh/km", 1000.0), ("veh/m", 1.0)] {
        if let Some(body) = text.strip_suffix(unit) {
            return (body.trim_end(), s);
        }
    }
    (text, 1.0)
}

fn split_top_level(text: &str, sep: char) -> std::result::Result<Vec<&str>, String> {
    let mut depth = 0i32;
    let mut start = 0;
    let mut out = Vec::new();
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err("unbalanced `)`".into());
                }
            }
            c if c == sep && depth == 0 => {
                out.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced `(`".into());
    }
    out.push(&text[start..]);
    Ok(out)
}

fn parse_num(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("expected a number, got `{}`", s.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number `{}`", s.trim()))
    }
}

fn parse_term(term: &str) -> std::result::Result<Profile, String> {
    let open = term.find('(').ok_or_else(|| format!("expected `name(...)`, got `{term}`"))?;
    let name = term[..open].trim();
    let args = term[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| format!("missing `)` in `{term}`"))?;
    let list: Vec<&str> = args.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let knots = || -> std::result::Result<Vec<(f64, f64)>, String> {
        let k: Vec<(f64, f64)> = list
            .iter()
            .map(|a| {
                let (z, v) = a.split_once(':').ok_or_else(|| format!("expected `z:value`, got `{a}`"))?;
                Ok((parse_num(z)?, parse_num(v)?))
            })
            .collect::<std::result::Result<_, String>>()?;
        if k.is_empty() {
            return Err(format!("`{name}` needs at least one knot"));
        }
        if k.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(format!("`{name}` knots must be strictly increasing in z"));
        }
        Ok(k)
    };
    match name {
        "constant" => match list.as_slice() {
            [c] => Ok(Profile::Constant(parse_num(c)?)),
            _ => Err("constant takes one argument".into()),
        },
        "pwconst" => {
            let k = knots()?;
            if k[0].0 != 0.0 {
                return Err("pwconst must start at z = 0".into());
            }
            Ok(Profile::PwConst(k))
        }
        "pwlinear" => Ok(Profile::PwLinear(knots()?)),
        "bump" => match list.as_slice() {
            [b, p, c, w] => {
                let half_width = parse_num(w)?;
                if half_width <= 0.0 {
                    return Err("bump half width must be positive".into());
                }
                Ok(Profile::Bump {
                    base: parse_num(b)?,
                    peak: parse_num(p)?,
                    center: parse_num(c)?,
                    half_width,
                })
            }
            _ => Err("bump takes (base, peak, center, half_width)".into()),
        },
        other => Err(format!("unknown profile primitive `{other}`")),
    }
}

/// Samples `profile` at the cell centers of `grid`.
pub fn profile_eval(profile: &Profile, grid: &Grid) -> Result<CellField> {
    profile
        .check_positions(grid.length_m())
        .map_err(Error::Validation)?;
    let field = grid.sample(|z| profile.value_at(z, grid.length_m()));
    if !field.is_finite() {
        return Err(Error::Validation(format!("profile `{profile}` is not finite")));
    }
    Ok(field)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub length: f64,
    pub cells: usize,
    pub v_max: f64,
    pub rho_cr: f64,
    pub rho_max: f64,
    pub horizon: f64,
    pub dt: f64,
    pub cfl: f64,
    /// Plant steps between controller updates.
    pub control_interval: usize,
    pub mode: ControllerMode,
    pub rho_init: Profile,
    pub lambda: Profile,
    /// Barrier profile at the horizon; λ interpolates linearly in time.
    pub lambda_end: Option<Profile>,
    pub rho_des: Profile,
    pub gamma: f64,
    pub alpha: f64,
    pub p: f64,
    pub h_diag: Profile,
    pub u_min: f64,
    pub u_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub b0: f64,
    pub linearization: LinearizationPoint,
    pub mean_zero: bool,
    pub delta_nonnegative: bool,
    pub solver_tol: f64,
    pub max_iter: Option<usize>,
    /// Seconds between recorded snapshots.
    pub output_every: f64,
    pub output_dir: Option<PathBuf>,
}

pub const DEFAULT_RHO_INIT: &str = "constant(12) + bump(0, 52, 300, 250) veh/km";
pub const DEFAULT_LAMBDA: &str = "constant(90) + bump(0, -62, 880, 220) veh/km";
pub const DEFAULT_RHO_DES: &str = "constant(25) veh/km";

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            length: 1000.0,
            cells: 100,
            v_max: 20.0,
            rho_cr: 0.015,
            rho_max: 0.15,
            horizon: 200.0,
            dt: 0.25,
            cfl: crate::plant::DEFAULT_CFL,
            control_interval: 1,
            mode: ControllerMode::ClfCbf,
            rho_init: Profile::parse(DEFAULT_RHO_INIT).expect("default profile"),
            lambda: Profile::parse(DEFAULT_LAMBDA).expect("default profile"),
            lambda_end: None,
            rho_des: Profile::parse(DEFAULT_RHO_DES).expect("default profile"),
            gamma: 0.025,
            alpha: 1.0,
            p: 1000.0,
            h_diag: Profile::Constant(1.0),
            u_min: -0.005,
            u_max: 0.005,
            b_min: 0.1,
            b_max: 1.5,
            b0: 1.0,
            linearization: LinearizationPoint::FixedNominal {
                rho0_free: 0.01,
                rho0_congested: 0.05,
            },
            mean_zero: true,
            delta_nonnegative: false,
            solver_tol: 1e-8,
            max_iter: None,
            output_every: 1.0,
            output_dir: None,
        }
    }
}

#[derive(Clone, Copy)]
enum Unit {
    Density,
    Speed,
    Length,
    Time,
    PerLength,
    None,
}

fn parse_quantity(text: &str, unit: Unit) -> std::result::Result<f64, String> {
    let text = text.trim();
    // (suffix, factor, divide instead of multiply)
    let table: &[(&str, f64, bool)] = match unit {
        Unit::Density => &[("veh/km", 1000.0, true), ("veh/m", 1.0, false)],
        Unit::Speed => &[("km/h", 3.6, true), ("m/s", 1.0, false)],
        Unit::Length => &[("km", 1000.0, false), ("m", 1.0, false)],
        Unit::Time => &[("s", 1.0, false)],
        Unit::PerLength => &[("1/km", 1000.0, true), ("1/m", 1.0, false)],
        Unit::None => &[],
    };
    for &(suffix, f, divide) in table {
        if let Some(num) = text.strip_suffix(suffix) {
            let v = parse_num(num)?;
            return Ok(if divide { v / f } else { v * f });
        }
    }
    parse_num(text)
}

fn parse_bool(text: &str) -> std::result::Result<bool, String> {
    match text.trim() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn parse_count(text: &str) -> std::result::Result<usize, String> {
    text.trim()
        .parse()
        .map_err(|_| format!("expected a nonnegative integer, got `{}`", text.trim()))
}

impl ScenarioConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "name" => self.name = v.to_string(),
            "length" => self.length = parse_quantity(v, Unit::Length)?,
            "cells" => self.cells = parse_count(v)?,
            "v_max" => self.v_max = parse_quantity(v, Unit::Speed)?,
            "rho_cr" => self.rho_cr = parse_quantity(v, Unit::Density)?,
            "rho_max" => self.rho_max = parse_quantity(v, Unit::Density)?,
            "horizon" => self.horizon = parse_quantity(v, Unit::Time)?,
            "dt" => self.dt = parse_quantity(v, Unit::Time)?,
            "cfl" => self.cfl = parse_quantity(v, Unit::None)?,
            "control_interval" => self.control_interval = parse_count(v)?,
            "mode" => self.mode = v.parse().map_err(|e: Error| e.to_string())?,
            "rho_init" => self.rho_init = Profile::parse(v)?,
            "lambda" => self.lambda = Profile::parse(v)?,
            "lambda_end" => self.lambda_end = Some(Profile::parse(v)?),
            "rho_des" => self.rho_des = Profile::parse(v)?,
            "gamma" => self.gamma = parse_quantity(v, Unit::None)?,
            "alpha" => self.alpha = parse_quantity(v, Unit::None)?,
            "p" => self.p = parse_quantity(v, Unit::None)?,
            "h_diag" => self.h_diag = Profile::parse(v)?,
            "u_min" => self.u_min = parse_quantity(v, Unit::PerLength)?,
            "u_max" => self.u_max = parse_quantity(v, Unit::PerLength)?,
            "b_min" => self.b_min = parse_quantity(v, Unit::None)?,
            "b_max" => self.b_max = parse_quantity(v, Unit::None)?,
            "b0" => self.b0 = parse_quantity(v, Unit::None)?,
            "linearization" => {
                self.linearization = match v {
                    "successive" => LinearizationPoint::Successive,
                    "fixed" => match self.linearization {
                        p @ LinearizationPoint::FixedNominal { .. } => p,
                        LinearizationPoint::Successive => ScenarioConfig::default().linearization,
                    },
                    other => return Err(format!("expected fixed or successive, got `{other}`")),
                }
            }
            "rho0_free" | "rho0_congested" => {
                let x = parse_quantity(v, Unit::Density)?;
                let (mut free, mut cong) = match self.linearization {
                    LinearizationPoint::FixedNominal {
                        rho0_free,
                        rho0_congested,
                    } => (rho0_free, rho0_congested),
                    LinearizationPoint::Successive => {
                        return Err(format!("`{key}` requires linearization = fixed"));
                    }
                };
                if key.trim() == "rho0_free" {
                    free = x;
                } else {
                    cong = x;
                }
                self.linearization = LinearizationPoint::FixedNominal {
                    rho0_free: free,
                    rho0_congested: cong,
                };
            }
            "mean_zero" => self.mean_zero = parse_bool(v)?,
            "delta_nonnegative" => self.delta_nonnegative = parse_bool(v)?,
            "solver_tol" => self.solver_tol = parse_quantity(v, Unit::None)?,
            "max_iter" => self.max_iter = Some(parse_count(v)?),
            "output_every" => self.output_every = parse_quantity(v, Unit::Time)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        cfg.apply_text(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies assignments from `text` without validating.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key, value)
                .map_err(|m| parse_err(format!("`{}`: {m}", key.trim())))?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn output_stride(&self) -> usize {
        ((self.output_every / self.dt).round() as usize).max(1)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::ring(self.length, self.cells)
    }

    pub fn diagram(&self) -> Result<FundamentalDiagram> {
        FundamentalDiagram::new(self.v_max, self.rho_cr, self.rho_max)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::Validation(m));
        let grid = self.grid().map_err(|e| Error::Validation(e.to_string()))?;
        let fd = self.diagram().map_err(|e| Error::Validation(e.to_string()))?;
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return invalid(format!("horizon must be nonnegative, got {}", self.horizon));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return invalid(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt));
        }
        let every = self.output_every / self.dt;
        if !(every >= 1.0 - 1e-9) || (every - every.round()).abs() > 1e-9 * every {
            return invalid(format!(
                "output_every {} is not a positive multiple of dt {}",
                self.output_every, self.dt
            ));
        }
        if self.control_interval == 0 {
            return invalid("control_interval must be at least 1".into());
        }
        let plant = Plant::new(grid, fd, self.b_max, self.cfl).map_err(|e| Error::Validation(e.to_string()))?;
        if self.dt > plant.cfl_max_dt() * (1.0 + 1e-12) {
            return invalid(format!(
                "dt {} s violates the CFL bound {} s",
                self.dt,
                plant.cfl_max_dt()
            ));
        }
        if !(self.solver_tol.is_finite() && self.solver_tol > 0.0) {
            return invalid(format!("solver_tol must be positive, got {}", self.solver_tol));
        }
        if self.max_iter == Some(0) {
            return invalid("max_iter must be positive".into());
        }
        let rho0 = profile_eval(&self.rho_init, &grid)?;
        if let Some(r) = rho0.iter().find(|&&r| !(0.0..=fd.rho_max()).contains(&r)) {
            return invalid(format!("rho_init value {r} outside [0, rho_max]"));
        }
        // the controller checks gains, limits, the barrier at t = 0 and the target
        let controller = self.controller(&grid, &fd).map_err(|e| Error::Validation(e.to_string()))?;
        controller.validate().map_err(|e| Error::Validation(e.to_string()))?;
        let lambda_end = controller.lambda_at(self.horizon);
        if let Some(l) = lambda_end.iter().find(|&&l| !(l > 0.0 && l <= fd.rho_max())) {
            return invalid(format!("barrier value {l} at the horizon outside (0, rho_max]"));
        }
        Ok(())
    }

    pub fn controller(&self, grid: &Grid, fd: &FundamentalDiagram) -> Result<Controller> {
        let lambda = profile_eval(&self.lambda, grid)?;
        let lambda_rate = match &self.lambda_end {
            Some(end) if self.horizon > 0.0 => {
                let end = profile_eval(end, grid)?;
                Some(end.sub(&lambda)?.map(|d| d / self.horizon))
            }
            _ => None,
        };
        Ok(Controller {
            grid: *grid,
            fd: *fd,
            mode: self.mode,
            b0: self.b0,
            limits: ControlLimits {
                u_min: self.u_min,
                u_max: self.u_max,
                b_min: self.b_min,
                b_max: self.b_max,
            },
            clf: ClfSpec {
                rho_des: profile_eval(&self.rho_des, grid)?,
                gamma: self.gamma,
                p: self.p,
            },
            cbf: CbfSpec {
                lambda,
                lambda_rate,
                alpha: self.alpha,
            },
            h_diag: profile_eval(&self.h_diag, grid)?,
            linearization: self.linearization,
            mean_zero: self.mean_zero,
            delta_nonnegative: self.delta_nonnegative,
            tol: self.solver_tol,
            max_iter: self.max_iter,
        })
    }

    /// Plant, controller and initial state.
    pub fn build(&self) -> Result<(Plant, Controller, PlantState)> {
        self.validate()?;
        let grid = self.grid()?;
        let fd = self.diagram()?;
        let plant = Plant::new(grid, fd, self.b_max, self.cfl)?;
        let controller = self.controller(&grid, &fd)?;
        let rho = profile_eval(&self.rho_init, &grid)?;
        let state = PlantState::new(rho, CellField::constant(grid.n_cells(), self.b0))?;
        Ok((plant, controller, state))
    }

    /// Serializes every field in SI units; [`ScenarioConfig::parse`] reads it
    /// back to an equal value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("name", self.name.clone());
        line("length", format!("{}", self.length));
        line("cells", format!("{}", self.cells));
        line("v_max", format!("{}", self.v_max));
        line("rho_cr", format!("{}", self.rho_cr));
        line("rho_max", format!("{}", self.rho_max));
        line("horizon", format!("{}", self.horizon));
        line("dt", format!("{}", self.dt));
        line("cfl", format!("{}", self.cfl));
        line("control_interval", format!("{}", self.control_interval));
        line("mode", self.mode.to_string());
        line("rho_init", self.rho_init.to_string());
        line("lambda", self.lambda.to_string());
        if let Some(end) = &self.lambda_end {
            line("lambda_end", end.to_string());
        }
        line("rho_des", self.rho_des.to_string());
        line("gamma", format!("{}", self.gamma));
        line("alpha", format!("{}", self.alpha));
        line("p", format!("{}", self.p));
        line("h_diag", self.h_diag.to_string());
        line("u_min", format!("{}", self.u_min));
        line("u_max", format!("{}", self.u_max));
        line("b_min", format!("{}", self.b_min));
        line("b_max", format!("{}", self.b_max));
        line("b0", format!("{}", self.b0));
        match self.linearization {
            LinearizationPoint::Successive => line("linearization", "successive".into()),
            LinearizationPoint::FixedNominal {
                rho0_free,
                rho0_congested,
            } => {
                line("linearization", "fixed".into());
                line("rho0_free", format!("{rho0_free}"));
                line("rho0_congested", format!("{rho0_congested}"));
            }
        }
        line("mean_zero", format!("{}", self.mean_zero));
        line("delta_nonnegative", format!("{}", self.delta_nonnegative));
        line("solver_tol", format!("{}", self.solver_tol));
        if let Some(m) = self.max_iter {
            line("max_iter", format!("{m}"));
        }
        line("output_every", format!("{}", self.output_every));
        if let Some(dir) = &self.output_dir {
            line("output_dir", dir.display().to_string());
        }
        out
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::parse(&text, &path.display().to_string())
}

pub fn write_config(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_text()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
