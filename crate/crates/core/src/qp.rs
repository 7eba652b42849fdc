//! Dense strictly convex QP with diagonal Hessian:
//!
//! ```text
//!     minimize    1/2 x' D x + c' x
//!     subject to  A_in x <= b_in
//!                 A_eq x  = b_eq
//!                 lower <= x <= upper
//! ```
//!
//! solved by a primal active-set method. Rows with a single nonzero are
//! folded into the variable bounds before the iteration starts, so the
//! working set only ever holds the coupled rows plus the set of variables
//! pinned at a bound. A feasible starting point is found by a regularized
//! phase-1 program that minimizes the largest row violation.

use crate::constraints::ConstraintSystem;
use crate::error::{Error, Result};
use crate::grid::CellField;

/// Sparse row `sum(coef * x[idx]) (<= | =) rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(entries: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { entries, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(k, a)| a * x[k]).sum()
    }

    fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, a)| a * a).sum::<f64>().sqrt()
    }

    /// Merges repeated indices and drops zero coefficients.
    fn normalized(&self) -> Self {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|&(k, _)| k);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (k, a) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == k => *acc += a,
                _ => merged.push((k, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        Self {
            entries: merged,
            rhs: self.rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadProgram {
    pub hess_diag: Vec<f64>,
    pub linear: Vec<f64>,
    pub ineq: Vec<LinearRow>,
    pub eq: Vec<LinearRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl QpStatus {
    pub fn code(self) -> i32 {
        match self {
            QpStatus::Optimal => 0,
            QpStatus::MaxIterations => 1,
            QpStatus::Infeasible => 2,
        }
    }
}

/// Lagrange multipliers in the sign convention
/// `D x + c + A_in' l_in + A_eq' l_eq + l_up - l_lo = 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Multipliers {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    fn zeros(p: &QuadProgram) -> Self {
        let n = p.n();
        Self {
            ineq: vec![0.0; p.ineq.len()],
            eq: vec![0.0; p.eq.len()],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }
}

/// Max-norm KKT residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Largest negative multiplier magnitude on an inequality.
    pub dual: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadSolution {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// Per phase; defaults to ten times the number of variables plus rows.
    pub max_iter: Option<usize>,
    /// Starting point; used when it is feasible.
    pub initial: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            initial: None,
        }
    }
}

/// Phase-1 weight on the distance to the starting guess. Smaller values
/// spread the Schur complement over too many decades for the Cholesky
/// pivot test; the restarts absorb the residual violation instead.
const PHASE1_REG: f64 = 1e-8;
const PHASE1_PASSES: usize = 6;

impl QuadProgram {
    /// Unconstrained program `1/2 |x|^2` in `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            hess_diag: vec![1.0; n],
            linear: vec![0.0; n],
            ineq: Vec::new(),
            eq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.hess_diag.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.hess_diag)
            .zip(&self.linear)
            .map(|((&xi, &d), &c)| 0.5 * d * xi * xi + c * xi)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for len in [self.linear.len(), self.lower.len(), self.upper.len()] {
            Error::check_len(n, len)?;
        }
        if let Some(d) = self.hess_diag.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Solver(format!(
                "Hessian diagonal must be positive and finite, got {d}"
            )));
        }
        if self.linear.iter().any(|c| !c.is_finite()) {
            return Err(Error::Solver("non-finite linear term".into()));
        }
        for row in self.ineq.iter().chain(&self.eq) {
            if !row.rhs.is_finite() && !(row.rhs == f64::INFINITY) {
                return Err(Error::Solver(format!("bad right-hand side {}", row.rhs)));
            }
            for &(k, a) in &row.entries {
                if k >= n || !a.is_finite() {
                    return Err(Error::Solver(format!("bad row entry ({k}, {a})")));
                }
            }
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(Error::Solver("NaN bound".into()));
        }
        Ok(())
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<QuadSolution> {
        self.validate()?;
        let n = self.n();
        let tol = opts.tol;
        let max_iter = opts
            .max_iter
            .unwrap_or(10 * (n + self.ineq.len() + self.eq.len()).max(1));
        let feas_tol = tol * 1e-2;

        let pre = Presolve::run(self, feas_tol);
        let guess: Vec<f64> = match &opts.initial {
            Some(g) if g.len() == n => g.clone(),
            _ => self
                .linear
                .iter()
                .zip(&self.hess_diag)
                .map(|(c, d)| -c / d)
                .collect(),
        };

        if pre.infeasible {
            let x = clamp_into(&guess, &self.lower, &self.upper);
            return Ok(self.finish(x, Multipliers::zeros(self), QpStatus::Infeasible, 0));
        }

        let mut x0 = clamp_into(&guess, &pre.lo, &pre.hi);
        let violation = pre.max_violation(self, &x0);
        let mut iterations = 0;
        if violation > feas_tol {
            let mut tau = violation;
            for _ in 0..PHASE1_PASSES {
                let (x1, tau1, it) = pre.phase_one(self, &x0, tau, max_iter);
                iterations += it;
                let stalled = tau1 > 0.5 * tau;
                x0 = x1;
                tau = tau1;
                if tau <= feas_tol || stalled {
                    break;
                }
            }
            if tau > feas_tol {
                return Ok(self.finish(x0, Multipliers::zeros(self), QpStatus::Infeasible, iterations));
            }
        }

        let core = ActiveSet {
            d: &self.hess_diag,
            c: &self.linear,
            rows: pre.general.iter().map(|&j| &pre.rows[j]).collect(),
            eqs: pre.eqs.iter().collect(),
            lo: &pre.lo,
            hi: &pre.hi,
            dual_tol: tol * 1e-2,
        };
        let out = core.run(x0, max_iter);
        iterations += out.iterations;

        let mut mult = Multipliers::zeros(self);
        for (local, &j) in pre.general.iter().enumerate() {
            mult.ineq[j] = out.row_mult[local];
        }
        mult.eq.clone_from(&out.eq_mult);
        for k in 0..n {
            let (lo_mult, up_mult) = (out.lower_mult[k], out.upper_mult[k]);
            if up_mult != 0.0 {
                match pre.hi_src[k] {
                    BoundSource::Box => mult.upper[k] += up_mult,
                    BoundSource::Row(j, coef) => mult.ineq[j] += up_mult / coef,
                }
            }
            if lo_mult != 0.0 {
                match pre.lo_src[k] {
                    BoundSource::Box => mult.lower[k] += lo_mult,
                    BoundSource::Row(j, coef) => mult.ineq[j] += lo_mult / -coef,
                }
            }
        }

        let status = if out.converged {
            QpStatus::Optimal
        } else {
            QpStatus::MaxIterations
        };
        let mut sol = self.finish(out.x, mult, status, iterations);
        if sol.status == QpStatus::Optimal && !sol.kkt.within(tol) {
            sol.status = QpStatus::MaxIterations;
        }
        Ok(sol)
    }

    fn finish(&self, x: Vec<f64>, multipliers: Multipliers, status: QpStatus, iterations: usize) -> QuadSolution {
        let kkt = self.check_kkt(&x, &multipliers);
        QuadSolution {
            x,
            multipliers,
            status,
            iterations,
            kkt,
        }
    }

    /// KKT residuals of a candidate primal-dual pair, computed from the
    /// original problem data only.
    pub fn check_kkt(&self, x: &[f64], m: &Multipliers) -> KktReport {
        let n = self.n();
        let mut grad: Vec<f64> = (0..n)
            .map(|k| self.hess_diag[k] * x[k] + self.linear[k] + m.upper[k] - m.lower[k])
            .collect();
        for (row, &l) in self.ineq.iter().zip(&m.ineq).chain(self.eq.iter().zip(&m.eq)) {
            for &(k, a) in &row.entries {
                grad[k] += a * l;
            }
        }
        let stationarity = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));

        let mut primal = 0.0f64;
        let mut comp = 0.0f64;
        let mut dual = 0.0f64;
        for (row, &l) in self.ineq.iter().zip(&m.ineq) {
            let slack = row.rhs - row.dot(x);
            primal = primal.max(-slack);
            if l != 0.0 {
                comp = comp.max((l * slack).abs());
            }
            dual = dual.max(-l);
        }
        for row in &self.eq {
            primal = primal.max((row.dot(x) - row.rhs).abs());
        }
        for k in 0..n {
            primal = primal.max(self.lower[k] - x[k]).max(x[k] - self.upper[k]);
            if m.lower[k] != 0.0 {
                comp = comp.max((m.lower[k] * (x[k] - self.lower[k])).abs());
            }
            if m.upper[k] != 0.0 {
                comp = comp.max((m.upper[k] * (self.upper[k] - x[k])).abs());
            }
            dual = dual.max(-m.lower[k]).max(-m.upper[k]);
        }
        KktReport {
            stationarity,
            primal: primal.max(0.0),
            complementarity: comp,
            dual,
        }
    }
}

fn clamp_into(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| {
            let v = if v.is_finite() { v } else { 0.0 };
            v.max(l).min(h)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BoundSource {
    Box,
    /// Tightened by single-variable inequality `j` with the given coefficient.
    Row(usize, f64),
}

struct Presolve {
    rows: Vec<LinearRow>,
    eqs: Vec<LinearRow>,
    /// Inequalities coupling two or more variables.
    general: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    lo_src: Vec<BoundSource>,
    hi_src: Vec<BoundSource>,
    infeasible: bool,
}

impl Presolve {
    fn run(p: &QuadProgram, feas_tol: f64) -> Self {
        let n = p.n();
        let rows: Vec<LinearRow> = p.ineq.iter().map(LinearRow::normalized).collect();
        let eqs: Vec<LinearRow> = p.eq.iter().map(LinearRow::normalized).collect();
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        let mut lo_src = vec![BoundSource::Box; n];
        let mut hi_src = vec![BoundSource::Box; n];
        let mut general = Vec::new();
        let mut infeasible = false;

        for (j, row) in rows.iter().enumerate() {
            match row.entries.as_slice() {
                [] => infeasible |= row.rhs < -feas_tol,
                &[(k, a)] => {
                    let v = row.rhs / a;
                    if a > 0.0 && v < hi[k] {
                        hi[k] = v;
                        hi_src[k] = BoundSource::Row(j, a);
                    } else if a < 0.0 && v > lo[k] {
                        lo[k] = v;
                        lo_src[k] = BoundSource::Row(j, a);
                    }
                }
                _ => general.push(j),
            }
        }
        for row in &eqs {
            if row.entries.is_empty() {
                infeasible |= row.rhs.abs() > feas_tol;
            }
        }
        for k in 0..n {
            if lo[k] > hi[k] {
                if lo[k] - hi[k] <= feas_tol * (1.0 + lo[k].abs()) {
                    let mid = 0.5 * (lo[k] + hi[k]);
                    lo[k] = mid;
                    hi[k] = mid;
                } else {
                    infeasible = true;
                }
            }
        }
        Self {
            rows,
            eqs,
            general,
            lo,
            hi,
            lo_src,
            hi_src,
            infeasible,
        }
    }

    fn max_violation(&self, _p: &QuadProgram, x: &[f64]) -> f64 {
        let ineq = self
            .general
            .iter()
            .map(|&j| self.rows[j].dot(x) - self.rows[j].rhs)
            .fold(0.0f64, f64::max);
        let eq = self
            .eqs
            .iter()
            .filter(|r| !r.entries.is_empty())
            .map(|r| (r.dot(x) - r.rhs).abs())
            .fold(0.0f64, f64::max);
        ineq.max(eq)
    }

    /// Minimizes `1/2 tau^2 + eps/2 |x - x0|_D^2` subject to every coupled
    /// row relaxed by `tau`. Returns the point, the remaining violation and
    /// the iteration count.
    fn phase_one(&self, p: &QuadProgram, x0: &[f64], tau0: f64, max_iter: usize) -> (Vec<f64>, f64, usize) {
        let n = p.n();
        let t = n;
        let mut d: Vec<f64> = p.hess_diag.iter().map(|d| PHASE1_REG * d).collect();
        d.push(1.0);
        let mut c: Vec<f64> = (0..n).map(|k| -d[k] * x0[k]).collect();
        c.push(0.0);
        let mut lo = self.lo.clone();
        lo.push(0.0);
        let mut hi = self.hi.clone();
        hi.push(f64::INFINITY);

        let mut rows: Vec<LinearRow> = Vec::new();
        for &j in &self.general {
            let r = &self.rows[j];
            let mut e = r.entries.clone();
            e.push((t, -1.0));
            rows.push(LinearRow::new(e, r.rhs));
        }
        for r in self.eqs.iter().filter(|r| !r.entries.is_empty()) {
            let mut up = r.entries.clone();
            up.push((t, -1.0));
            rows.push(LinearRow::new(up, r.rhs));
            let mut down: Vec<(usize, f64)> = r.entries.iter().map(|&(k, a)| (k, -a)).collect();
            down.push((t, -1.0));
            rows.push(LinearRow::new(down, -r.rhs));
        }

        let mut start = x0.to_vec();
        start.push(tau0);
        let core = ActiveSet {
            d: &d,
            c: &c,
            rows: rows.iter().collect(),
            eqs: Vec::new(),
            lo: &lo,
            hi: &hi,
            dual_tol: 1e-14,
        };
        let out = core.run(start, max_iter);
        let mut x = out.x;
        x.truncate(n);
        let tau = self.max_violation(p, &x);
        (x, tau, out.iterations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pin {
    Free,
    Lower,
    Upper,
    /// Lower and upper bound coincide.
    Fixed,
}

struct ActiveSet<'a> {
    d: &'a [f64],
    c: &'a [f64],
    rows: Vec<&'a LinearRow>,
    eqs: Vec<&'a LinearRow>,
    lo: &'a [f64],
    hi: &'a [f64],
    dual_tol: f64,
}

struct CoreOutcome {
    x: Vec<f64>,
    row_mult: Vec<f64>,
    eq_mult: Vec<f64>,
    lower_mult: Vec<f64>,
    upper_mult: Vec<f64>,
    iterations: usize,
    converged: bool,
}

enum Blocking {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

/// Dropping candidate: working row `Row(local)` or pinned variable `Var(k)`.
#[derive(Clone, Copy)]
enum Drop {
    Row(usize),
    Var(usize),
}

impl<'a> ActiveSet<'a> {
    fn run(&self, mut x: Vec<f64>, max_iter: usize) -> CoreOutcome {
        let n = self.d.len();
        let mut pins: Vec<Pin> = (0..n)
            .map(|k| {
                if self.lo[k] == self.hi[k] {
                    Pin::Fixed
                } else {
                    Pin::Free
                }
            })
            .collect();
        for k in 0..n {
            if pins[k] == Pin::Fixed {
                x[k] = self.lo[k];
            }
        }
        let mut working: Vec<usize> = Vec::new();
        let mut in_working = vec![false; self.rows.len()];
        let mut degenerate = false;
        let step_tol = 1e-13;

        for iter in 0..max_iter {
            let Some((p, eq_mult, w_mult)) = self.eqp(&x, &pins, &working) else {
                return self.outcome(x, &pins, &working, None, iter, false);
            };
            let xnorm = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let pnorm = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));

            if pnorm <= step_tol * xnorm {
                for k in 0..n {
                    x[k] += p[k];
                }
                let grad = self.full_gradient(&x, &working, &eq_mult, &w_mult);
                // most negative multiplier, or lowest index after a
                // degenerate step (Bland)
                let mut best: Option<(Drop, f64)> = None;
                let mut consider = |cand: Drop, value: f64| {
                    if value < -self.dual_tol {
                        let better = match best {
                            None => true,
                            Some((_, v)) => !degenerate && value < v,
                        };
                        if better {
                            best = Some((cand, value));
                        }
                    }
                };
                for (pos, &j) in working.iter().enumerate() {
                    let _ = j;
                    consider(Drop::Row(pos), w_mult[pos]);
                }
                for k in 0..n {
                    match pins[k] {
                        Pin::Lower => consider(Drop::Var(k), grad[k]),
                        Pin::Upper => consider(Drop::Var(k), -grad[k]),
                        _ => {}
                    }
                }
                match best {
                    None => {
                        return self.outcome(x, &pins, &working, Some((eq_mult, w_mult)), iter + 1, true);
                    }
                    Some((Drop::Row(pos), _)) => {
                        let j = working.remove(pos);
                        in_working[j] = false;
                    }
                    Some((Drop::Var(k), _)) => pins[k] = Pin::Free,
                }
                continue;
            }

            let mut alpha = 1.0;
            let mut block = None;
            for (j, row) in self.rows.iter().enumerate() {
                if in_working[j] {
                    continue;
                }
                let ap = row.dot(&p);
                if ap > 1e-12 * row.norm() * pnorm {
                    let slack = (row.rhs - row.dot(&x)).max(0.0);
                    let t = slack / ap;
                    if t < alpha {
                        alpha = t;
                        block = Some(Blocking::Row(j));
                    }
                }
            }
            for k in 0..n {
                if pins[k] != Pin::Free {
                    continue;
                }
                if p[k] > 0.0 && self.hi[k].is_finite() {
                    let t = (self.hi[k] - x[k]).max(0.0) / p[k];
                    if t < alpha {
                        alpha = t;
                        block = Some(Blocking::Upper(k));
                    }
                } else if p[k] < 0.0 && self.lo[k].is_finite() {
                    let t = (self.lo[k] - x[k]).min(0.0) / p[k];
                    if t < alpha {
                        alpha = t;
                        block = Some(Blocking::Lower(k));
                    }
                }
            }
            for k in 0..n {
                x[k] += alpha * p[k];
            }
            degenerate = alpha == 0.0;
            match block {
                Some(Blocking::Row(j)) => {
                    let pos = working.partition_point(|&w| w < j);
                    working.insert(pos, j);
                    in_working[j] = true;
                }
                Some(Blocking::Lower(k)) => {
                    x[k] = self.lo[k];
                    pins[k] = Pin::Lower;
                }
                Some(Blocking::Upper(k)) => {
                    x[k] = self.hi[k];
                    pins[k] = Pin::Upper;
                }
                None => {}
            }
        }
        self.outcome(x, &pins, &working, None, max_iter, false)
    }

    fn pinned_value(&self, k: usize, pin: Pin) -> Option<f64> {
        match pin {
            Pin::Free => None,
            Pin::Lower | Pin::Fixed => Some(self.lo[k]),
            Pin::Upper => Some(self.hi[k]),
        }
    }

    /// Step to the minimizer over the current working set, with the
    /// multipliers of the equality rows and the working rows.
    fn eqp(&self, x: &[f64], pins: &[Pin], working: &[usize]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = x.len();
        let mut p = vec![0.0; n];
        let mut free = vec![true; n];
        for k in 0..n {
            if let Some(v) = self.pinned_value(k, pins[k]) {
                p[k] = v - x[k];
                free[k] = false;
            }
        }
        let g: Vec<f64> = (0..n).map(|k| self.d[k] * x[k] + self.c[k]).collect();

        let active: Vec<&LinearRow> = self
            .eqs
            .iter()
            .copied()
            .chain(working.iter().map(|&j| self.rows[j]))
            .collect();
        let m = active.len();
        let mut lambda = vec![0.0; m];
        if m > 0 {
            // Schur complement A_F D_F^-1 A_F' on the free variables
            let mut mat = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            let scaled: Vec<Vec<(usize, f64)>> = active
                .iter()
                .map(|r| {
                    r.entries
                        .iter()
                        .filter(|&&(k, _)| free[k])
                        .map(|&(k, a)| (k, a))
                        .collect()
                })
                .collect();
            let mut dense = vec![0.0; n];
            let mut target = vec![0.0; m];
            for i in 0..m {
                for &(k, a) in &scaled[i] {
                    dense[k] = a / self.d[k];
                }
                for j in 0..=i {
                    let v: f64 = scaled[j].iter().map(|&(k, a)| a * dense[k]).sum();
                    mat[i * m + j] = v;
                    mat[j * m + i] = v;
                }
                target[i] = active[i].rhs - active[i].dot(x) - active[i]
                    .entries
                    .iter()
                    .filter(|&&(k, _)| !free[k])
                    .map(|&(k, a)| a * p[k])
                    .sum::<f64>();
                let dg: f64 = scaled[i].iter().map(|&(k, _)| dense[k] * g[k]).sum();
                rhs[i] = -dg - target[i];
                for &(k, _) in &scaled[i] {
                    dense[k] = 0.0;
                }
            }
            let chol = Cholesky::factor(mat, m);
            lambda = chol.solve(rhs)?;
            self.free_step(&active, &free, &g, &lambda, &mut p);
            // A tiny entry of D amplifies rounding in the step; refine until
            // the working rows hold to working precision.
            for _ in 0..2 {
                let miss: Vec<f64> = (0..m)
                    .map(|i| {
                        let done: f64 = scaled[i].iter().map(|&(k, a)| a * p[k]).sum();
                        if chol.skip[i] {
                            0.0
                        } else {
                            done - target[i]
                        }
                    })
                    .collect();
                let size = miss.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let scale = target.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                if size <= 1e-15 * scale {
                    break;
                }
                let dl = chol.solve(miss)?;
                let mut dp = vec![0.0; n];
                self.free_step(&active, &free, &vec![0.0; n], &dl, &mut dp);
                for k in 0..n {
                    if free[k] {
                        p[k] += dp[k];
                    }
                }
                for (l, d) in lambda.iter_mut().zip(&dl) {
                    *l += d;
                }
            }
        } else {
            self.free_step(&active, &free, &g, &lambda, &mut p);
        }
        let w_mult = lambda.split_off(self.eqs.len());
        Some((p, lambda, w_mult))
    }

    /// `p_F = -D_F^-1 (g + A' lambda)_F`.
    fn free_step(&self, active: &[&LinearRow], free: &[bool], g: &[f64], lambda: &[f64], p: &mut [f64]) {
        let mut atl = g.to_vec();
        for (row, &l) in active.iter().zip(lambda) {
            for &(k, a) in &row.entries {
                atl[k] += a * l;
            }
        }
        for k in 0..p.len() {
            if free[k] {
                p[k] = -atl[k] / self.d[k];
            }
        }
    }

    fn full_gradient(&self, x: &[f64], working: &[usize], eq_mult: &[f64], w_mult: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = (0..x.len()).map(|k| self.d[k] * x[k] + self.c[k]).collect();
        let rows = self.eqs.iter().copied().zip(eq_mult).chain(
            working.iter().map(|&j| self.rows[j]).zip(w_mult),
        );
        for (row, &l) in rows {
            for &(k, a) in &row.entries {
                g[k] += a * l;
            }
        }
        g
    }

    fn outcome(
        &self,
        x: Vec<f64>,
        pins: &[Pin],
        working: &[usize],
        mults: Option<(Vec<f64>, Vec<f64>)>,
        iterations: usize,
        converged: bool,
    ) -> CoreOutcome {
        let n = x.len();
        let (eq_mult, w_mult) = mults.unwrap_or_else(|| (vec![0.0; self.eqs.len()], vec![0.0; working.len()]));
        let grad = self.full_gradient(&x, working, &eq_mult, &w_mult);
        let mut lower_mult = vec![0.0; n];
        let mut upper_mult = vec![0.0; n];
        if converged {
            for k in 0..n {
                match pins[k] {
                    Pin::Lower => lower_mult[k] = grad[k],
                    Pin::Upper => upper_mult[k] = -grad[k],
                    Pin::Fixed if grad[k] > 0.0 => lower_mult[k] = grad[k],
                    Pin::Fixed => upper_mult[k] = -grad[k],
                    Pin::Free => {}
                }
            }
        }
        let mut row_mult = vec![0.0; self.rows.len()];
        if converged {
            for (&j, &l) in working.iter().zip(&w_mult) {
                row_mult[j] = l;
            }
        }
        CoreOutcome {
            x,
            row_mult,
            eq_mult,
            lower_mult,
            upper_mult,
            iterations,
            converged,
        }
    }
}

/// Cholesky factor of a symmetric positive (semi)definite system. Pivots
/// that vanish relative to the diagonal mark redundant rows; their
/// multipliers are set to zero.
struct Cholesky {
    l: Vec<f64>,
    skip: Vec<bool>,
    m: usize,
}

impl Cholesky {
    fn factor(mut a: Vec<f64>, m: usize) -> Self {
        let scale = (0..m).fold(0.0f64, |s, i| s.max(a[i * m + i]));
        let mut skip = vec![false; m];
        for j in 0..m {
            let mut diag = a[j * m + j];
            for k in 0..j {
                diag -= a[j * m + k] * a[j * m + k];
            }
            if diag <= 1e-13 * scale {
                skip[j] = true;
                for i in j..m {
                    a[i * m + j] = 0.0;
                }
                continue;
            }
            let l = diag.sqrt();
            a[j * m + j] = l;
            for i in (j + 1)..m {
                let mut v = a[i * m + j];
                for k in 0..j {
                    v -= a[i * m + k] * a[j * m + k];
                }
                a[i * m + j] = v / l;
            }
        }
        Self { l: a, skip, m }
    }

    fn solve(&self, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let (a, m) = (&self.l, self.m);
        for i in 0..m {
            if self.skip[i] {
                b[i] = 0.0;
                continue;
            }
            let mut v = b[i];
            for k in 0..i {
                v -= a[i * m + k] * b[k];
            }
            b[i] = v / a[i * m + i];
        }
        for i in (0..m).rev() {
            if self.skip[i] {
                b[i] = 0.0;
                continue;
            }
            let mut v = b[i];
            for k in (i + 1)..m {
                v -= a[k * m + i] * b[k];
            }
            b[i] = v / a[i * m + i];
        }
        if b.iter().all(|v| v.is_finite()) {
            Some(b)
        } else {
            None
        }
    }
}

/// The per-step control program over `(u, delta)`:
/// minimize `1/2 u' H u + p delta^2` subject to a [`ConstraintSystem`].
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h_diag: Vec<f64>,
    pub p: f64,
    pub constraints: ConstraintSystem,
    /// Forces `delta >= 0`; by default delta is sign-free.
    pub delta_nonnegative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: CellField,
    /// Zero when the program has no stabilizing row.
    pub delta: f64,
    pub status: QpStatus,
    pub kkt: KktReport,
    pub multipliers: Multipliers,
    pub iterations: usize,
}

impl QpProblem {
    pub fn n_cells(&self) -> usize {
        self.h_diag.len()
    }

    pub fn has_delta(&self) -> bool {
        self.constraints.clf.is_some()
    }

    /// Decision dimension: one per cell, plus delta when relaxed.
    pub fn n_vars(&self) -> usize {
        self.n_cells() + usize::from(self.has_delta())
    }

    fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::Solver(format!("penalty p must be positive, got {}", self.p)));
        }
        self.constraints.validate(self.n_cells())
    }

    /// Variables are `u[0..n]` followed by `delta`; inequality row 0 is the
    /// stabilizing row when present, then one row per barrier cell.
    pub fn to_program(&self) -> QuadProgram {
        let n = self.n_cells();
        let nv = self.n_vars();
        let cs = &self.constraints;
        let mut prog = QuadProgram::new(nv);
        prog.hess_diag[..n].copy_from_slice(&self.h_diag);
        let (u_min, u_max) = cs.u_bounds;
        for k in 0..n {
            prog.lower[k] = u_min;
            prog.upper[k] = u_max;
        }
        if let Some(clf) = &cs.clf {
            prog.hess_diag[n] = 2.0 * self.p;
            if self.delta_nonnegative {
                prog.lower[n] = 0.0;
            }
            let mut entries: Vec<(usize, f64)> = clf
                .coefs
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(k, &a)| (k, a))
                .collect();
            entries.push((n, -1.0));
            prog.ineq.push(LinearRow::new(entries, clf.rhs));
        }
        for row in &cs.cbf {
            prog.ineq.push(LinearRow::new(vec![(row.cell, row.coef)], row.rhs));
        }
        if let Some(weight) = cs.mean_zero {
            prog.eq.push(LinearRow::new((0..n).map(|k| (k, weight)).collect(), 0.0));
        }
        prog
    }

    fn split(&self, x: &[f64]) -> (CellField, f64) {
        let n = self.n_cells();
        let delta = if self.has_delta() { x[n] } else { 0.0 };
        (CellField::from(x[..n].to_vec()), delta)
    }

    fn join(&self, sol: &QpSolution) -> Vec<f64> {
        let mut x = sol.u.to_vec();
        if self.has_delta() {
            x.push(sol.delta);
        }
        x
    }
}

/// Solves the control program. Starts from `u = 0` with the smallest
/// admissible delta, which is feasible whenever no barrier row binds at zero.
pub fn solve(problem: &QpProblem, tol: f64, max_iter: Option<usize>) -> Result<QpSolution> {
    problem.validate()?;
    let prog = problem.to_program();
    let n = problem.n_cells();
    let (u_min, u_max) = problem.constraints.u_bounds;
    let mut initial = vec![0.0f64.max(u_min).min(u_max); n];
    if let Some(clf) = &problem.constraints.clf {
        let lhs: f64 = clf.coefs.iter().zip(&initial).map(|(a, u)| a * u).sum();
        let mut delta = lhs - clf.rhs;
        if problem.delta_nonnegative || delta < 0.0 {
            delta = delta.max(0.0);
        }
        initial.push(delta);
    }
    let sol = prog.solve(&SolveOptions {
        tol,
        max_iter,
        initial: Some(initial),
    })?;
    let (u, delta) = problem.split(&sol.x);
    Ok(QpSolution {
        u,
        delta,
        status: sol.status,
        kkt: sol.kkt,
        multipliers: sol.multipliers,
        iterations: sol.iterations,
    })
}

/// Residuals of `candidate` against `problem`, independent of how the
/// candidate was produced.
pub fn check_kkt(problem: &QpProblem, candidate: &QpSolution) -> KktReport {
    let prog = problem.to_program();
    prog.check_kkt(&problem.join(candidate), &candidate.multipliers)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::constraints::{CbfRow, ClfRow};

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn unconstrained_minimum_is_origin() {
        let prog = QuadProgram::new(3);
        let sol = prog.solve(&opts()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.x, vec![0.0; 3]);
    }

    #[test]
    fn projection_onto_halfline() {
        let mut prog = QuadProgram::new(1);
        prog.ineq.push(LinearRow::new(vec![(0, 1.0)], -1.0));
        let sol = prog.solve(&opts()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] + 1.0).abs() < 1e-15);
        // multiplier maps back to the row, not the bound
        assert!((sol.multipliers.ineq[0] - 1.0).abs() < 1e-12);
        assert_eq!(sol.multipliers.upper[0], 0.0);
    }

    #[test]
    fn coupled_row_with_bounds() {
        // min 1/2 (x^2 + y^2) - x - y  s.t. x + y <= 1, 0 <= x <= 0.2
        let mut prog = QuadProgram::new(2);
        prog.linear = vec![-1.0, -1.0];
        prog.ineq.push(LinearRow::new(vec![(0, 1.0), (1, 1.0)], 1.0));
        prog.lower[0] = 0.0;
        prog.upper[0] = 0.2;
        let sol = prog.solve(&opts()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.2).abs() < 1e-12);
        assert!((sol.x[1] - 0.8).abs() < 1e-12);
        assert!(sol.kkt.within(1e-10));
    }

    #[test]
    fn phase_one_with_tight_rows_converges() {
        let mut prog = QuadProgram::new(4);
        prog.hess_diag = vec![1.4074113580712233, 4.925454689597873, 0.9824702325293811, 1.0451900804458347];
        prog.linear = vec![-4.0632629904924045, -1.190041703979996, 1.4241301617328723, 4.153845405960086];
        let rows: [([f64; 4], f64); 3] = [
            ([-0.1368594109521304, 0.9423395120027207, -0.0956637250026251, -0.9956838185261745], -0.32886212985082985),
            ([0.4077985626639897, 0.2218929757189292, -1.6113414664575236, 1.2256672460839484], -0.4889061060463211),
            ([-0.7510271092907805, 0.17071437801433031, 0.37178454912020165, -1.7555298421599357], 1.1999621844710406),
        ];
        for (a, b) in rows {
            prog.ineq.push(LinearRow::new(a.iter().copied().enumerate().collect(), b));
        }
        prog.lower = vec![-2.514791095118695, -1.501731775870977, -1.0926222255049873, -2.4142294576072234];
        prog.upper = vec![0.047805386098680014, -0.6259197226334321, 2.194327466954209, 1.251434635273851];
        let sol = prog.solve(&opts()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let expected = [0.04780538609867968, -0.6652601894711012, -0.008183022676551365, -0.30511556515066884];
        for (a, b) in sol.x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{:?}", sol.x);
        }
    }

    #[test]
    fn equality_needs_phase_one() {
        // min 1/2 |x|^2 s.t. x0 + x1 + x2 = 3, x0 >= 2
        let mut prog = QuadProgram::new(3);
        prog.eq.push(LinearRow::new(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 3.0));
        prog.lower[0] = 2.0;
        let sol = prog.solve(&opts()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
        assert!((sol.x[1] - 0.5).abs() < 1e-9);
        assert!((sol.x[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_bounds_and_rows() {
        let mut prog = QuadProgram::new(1);
        prog.upper[0] = 1.0;
        prog.ineq.push(LinearRow::new(vec![(0, -1.0)], -2.0));
        assert_eq!(prog.solve(&opts()).unwrap().status, QpStatus::Infeasible);

        let mut prog = QuadProgram::new(2);
        prog.ineq.push(LinearRow::new(vec![(0, 1.0), (1, 1.0)], -1.0));
        prog.ineq.push(LinearRow::new(vec![(0, -1.0), (1, -1.0)], -1.0));
        assert_eq!(prog.solve(&opts()).unwrap().status, QpStatus::Infeasible);

        let mut prog = QuadProgram::new(2);
        prog.ineq.push(LinearRow::new(vec![(0, 0.0)], -1.0));
        assert_eq!(prog.solve(&opts()).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_malformed_programs() {
        let mut prog = QuadProgram::new(2);
        prog.hess_diag[1] = 0.0;
        assert!(prog.solve(&opts()).is_err());
        let mut prog = QuadProgram::new(2);
        prog.ineq.push(LinearRow::new(vec![(5, 1.0)], 0.0));
        assert!(prog.solve(&opts()).is_err());
    }

    fn clf_problem(coefs: Vec<f64>, rhs: f64, p: f64, h: Vec<f64>, bounds: (f64, f64)) -> QpProblem {
        let n = coefs.len();
        QpProblem {
            h_diag: h,
            p,
            constraints: ConstraintSystem {
                n_cells: n,
                clf: Some(ClfRow {
                    coefs: CellField::from(coefs),
                    rhs,
                }),
                cbf: Vec::new(),
                u_bounds: bounds,
                mean_zero: None,
            },
            delta_nonnegative: false,
        }
    }

    #[test]
    fn zero_problem_has_zero_residuals() {
        let prob = clf_problem(vec![0.0; 4], 0.0, 1.0, vec![1.0; 4], (-1.0, 1.0));
        let sol = solve(&prob, 1e-8, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.u.to_vec(), vec![0.0; 4]);
        assert_eq!(sol.delta, 0.0);
        let kkt = check_kkt(&prob, &sol);
        assert_eq!(kkt.max(), 0.0);
    }

    #[test]
    fn single_row_matches_closed_form() {
        let a = vec![0.3, -0.7, 1.1, 0.05];
        let h = vec![1.0, 2.0, 0.5, 1.5];
        let (p, rhs) = (1000.0, -0.02);
        let prob = clf_problem(a.clone(), rhs, p, h.clone(), (-10.0, 10.0));
        let sol = solve(&prob, 1e-8, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        // u = -H^-1 a mu, delta = mu / 2p, mu = s / (a' H^-1 a + 1/2p)
        let s = (-rhs).max(0.0);
        let metric: f64 = a.iter().zip(&h).map(|(ai, hi)| ai * ai / hi).sum::<f64>() + 0.5 / p;
        let mu = s / metric;
        for k in 0..4 {
            let expect = (-a[k] * mu / h[k]).clamp(-10.0, 10.0);
            assert!((sol.u[k] - expect).abs() < 1e-12, "{k}: {} vs {expect}", sol.u[k]);
        }
        assert!((sol.delta - mu / (2.0 * p)).abs() < 1e-14);
        assert!(check_kkt(&prob, &sol).within(1e-8));
    }

    #[test]
    fn perturbation_breaks_stationarity() {
        let prob = clf_problem(vec![0.2, -0.4, 0.1], -0.01, 1000.0, vec![1.0; 3], (-1.0, 1.0));
        let tol = 1e-8;
        let mut sol = solve(&prob, tol, None).unwrap();
        assert!(check_kkt(&prob, &sol).within(tol));
        sol.u[1] += 10.0 * tol;
        assert!(check_kkt(&prob, &sol).stationarity > tol);
    }

    #[test]
    fn barrier_rows_are_never_relaxed() {
        let mut prob = clf_problem(vec![-0.5, 0.5, -0.2], -0.05, 1000.0, vec![1.0; 3], (-0.1, 0.1));
        prob.constraints.cbf = vec![
            CbfRow { cell: 0, coef: -0.2, rhs: -0.004 },
            CbfRow { cell: 2, coef: -0.2, rhs: 0.0 },
        ];
        prob.constraints.mean_zero = Some(10.0);
        let sol = solve(&prob, 1e-8, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(-0.2 * sol.u[0] <= -0.004 + 1e-12);
        assert!(-0.2 * sol.u[2] <= 1e-12);
        assert!(sol.u.iter().all(|&u| (-0.1..=0.1).contains(&u)));
        assert!(sol.u.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn solves_are_bitwise_deterministic() {
        let mut prob = clf_problem(
            (0..50).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.01).collect(),
            -0.3,
            1000.0,
            vec![1.0; 50],
            (-0.05, 0.05),
        );
        prob.constraints.mean_zero = Some(10.0);
        let a = solve(&prob, 1e-8, None).unwrap();
        let b = solve(&prob, 1e-8, None).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_minimizer(
            a in prop::collection::vec(-1.0..1.0f64, 5),
            rhs in -0.5..0.1f64,
            scale in 0.1..10.0f64,
        ) {
            let prob = clf_problem(a.clone(), rhs, 1000.0, vec![1.0; 5], (-0.3, 0.3));
            let mut scaled = prob.clone();
            scaled.h_diag = vec![scale; 5];
            scaled.p *= scale;
            let s1 = solve(&prob, 1e-10, None).unwrap();
            let s2 = solve(&scaled, 1e-10, None).unwrap();
            for k in 0..5 {
                prop_assert!((s1.u[k] - s2.u[k]).abs() < 1e-9);
            }
            prop_assert!((s1.delta - s2.delta).abs() < 1e-9);
        }

        #[test]
        fn larger_penalty_never_grows_delta(
            a in prop::collection::vec(-1.0..1.0f64, 4),
            rhs in -1.0..0.2f64,
            p in 0.1..100.0f64,
            factor in 1.0..100.0f64,
            bound in 0.01..1.0f64,
        ) {
            let low = solve(&clf_problem(a.clone(), rhs, p, vec![1.0; 4], (-bound, bound)), 1e-10, None).unwrap();
            let high = solve(&clf_problem(a, rhs, p * factor, vec![1.0; 4], (-bound, bound)), 1e-10, None).unwrap();
            prop_assert_eq!(low.status, QpStatus::Optimal);
            prop_assert_eq!(high.status, QpStatus::Optimal);
            prop_assert!(high.delta.abs() <= low.delta.abs() + 1e-12);
        }
    }
}
