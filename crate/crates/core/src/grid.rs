//! Uniform cell-centered discretization of the ring road and the per-cell
//! field arithmetic built on it.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Uniform 1-D grid. Cell `i` covers `[i*dz, (i+1)*dz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    length_m: f64,
    n_cells: usize,
    dz: f64,
    periodic: bool,
}

impl Grid {
    pub fn new(length_m: f64, n_cells: usize, periodic: bool) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        if !(length_m.is_finite() && length_m > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "road length must be positive, got {length_m}"
            )));
        }
        Ok(Self {
            length_m,
            n_cells,
            dz: length_m / n_cells as f64,
            periodic,
        })
    }

    /// Ring road of the given length.
    pub fn ring(length_m: f64, n_cells: usize) -> Result<Self> {
        Self::new(length_m, n_cells, true)
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dz
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|i| self.cell_center(i))
    }

    /// Samples `f` at every cell center.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> CellField {
        CellField(self.centers().map(f).collect())
    }

    pub(crate) fn check(&self, field: &[f64]) -> Result<()> {
        Error::check_len(self.n_cells, field.len())
    }

    pub(crate) fn check_len_of(&self, len: usize) -> Result<()> {
        Error::check_len(self.n_cells, len)
    }
}

/// One scalar per grid cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellField(Vec<f64>);

impl CellField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &CellField) -> Result<Self> {
        Error::check_len(self.len(), other.len())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }
}

impl From<Vec<f64>> for CellField {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl FromIterator<f64> for CellField {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Deref for CellField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for CellField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Midpoint quadrature of `field` over the whole road.
pub fn integrate(field: &[f64], grid: &Grid) -> Result<f64> {
    grid.check(field)?;
    Ok(field.iter().sum::<f64>() * grid.dz())
}

/// Direction in which characteristics carry information through a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wave {
    /// Characteristic speed > 0 (free flow): take the backward difference.
    Downstream,
    /// Characteristic speed < 0 (congestion): take the forward difference.
    Upstream,
}

impl Wave {
    /// Classifies the characteristic speed `-v` of `dx/dt = v dx/dz`.
    pub fn from_advection(v: f64) -> Self {
        if v < 0.0 {
            Wave::Downstream
        } else {
            Wave::Upstream
        }
    }
}

/// One-sided first difference of `field`, upwinded per cell, with periodic
/// wraparound.
pub fn upwind_gradient(field: &[f64], waves: &[Wave], grid: &Grid) -> Result<CellField> {
    if !grid.is_periodic() {
        return Err(Error::UnsupportedBoundary);
    }
    grid.check(field)?;
    Error::check_len(grid.n_cells(), waves.len())?;
    let n = field.len();
    let dz = grid.dz();
    Ok((0..n)
        .map(|i| match waves[i] {
            Wave::Downstream => (field[i] - field[(i + n - 1) % n]) / dz,
            Wave::Upstream => (field[(i + 1) % n] - field[i]) / dz,
        })
        .collect())
}
