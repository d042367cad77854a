//! Uniform finite-volume mesh on `(0, V_F) × (0, g_max)` and cell-averaged
//! densities living on it.
//!
//! Cells are indexed `(i, j)` with `i` along voltage and `j` along
//! conductance, both zero-based. Storage is row-major in `v` then `g`, so a
//! fixed-`i` column of `J` conductance cells is contiguous.

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::model::{CouplingState, ModelParams};

/// Minimum number of cells along each axis.
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nv: usize,
    ng: usize,
    v_f: f64,
    g_max: f64,
    h_v: f64,
    h_g: f64,
    g_f: f64,
}

/// Builds the tensor mesh. Rejects `g_max ≤ g_F`, for which no cell would
/// carry the reset boundary condition.
pub fn build_grid(nv: usize, ng: usize, g_max: f64, params: &ModelParams) -> Result<Grid> {
    if nv < MIN_CELLS {
        return Err(invalid(
            "I",
            format!("need at least {MIN_CELLS} v-cells, got {nv}"),
        ));
    }
    if ng < MIN_CELLS {
        return Err(invalid(
            "J",
            format!("need at least {MIN_CELLS} g-cells, got {ng}"),
        ));
    }
    let g_f = params.g_f();
    if !(g_max.is_finite() && g_max > g_f) {
        return Err(invalid(
            "g_max",
            format!("must exceed g_F = {g_f}, got {g_max}"),
        ));
    }
    Ok(Grid {
        nv,
        ng,
        v_f: params.v_f,
        g_max,
        h_v: params.v_f / nv as f64,
        h_g: g_max / ng as f64,
        g_f,
    })
}

impl Grid {
    /// Number of voltage cells `I`.
    pub fn nv(&self) -> usize {
        self.nv
    }

    /// Number of conductance cells `J`.
    pub fn ng(&self) -> usize {
        self.ng
    }

    pub fn len(&self) -> usize {
        self.nv * self.ng
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h_v(&self) -> f64 {
        self.h_v
    }

    pub fn h_g(&self) -> f64 {
        self.h_g
    }

    pub fn cell_area(&self) -> f64 {
        self.h_v * self.h_g
    }

    pub fn v_max(&self) -> f64 {
        self.v_f
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ng + j
    }

    #[inline]
    pub fn v_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h_v
    }

    /// Left edge of cell `i`; `v_edge(nv)` is the threshold `V_F`.
    #[inline]
    pub fn v_edge(&self, k: usize) -> f64 {
        if k == self.nv {
            self.v_f
        } else {
            k as f64 * self.h_v
        }
    }

    #[inline]
    pub fn g_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h_g
    }

    #[inline]
    pub fn g_edge(&self, k: usize) -> f64 {
        if k == self.ng {
            self.g_max
        } else {
            k as f64 * self.h_g
        }
    }

    pub fn v_centers(&self) -> Vec<f64> {
        (0..self.nv).map(|i| self.v_center(i)).collect()
    }

    pub fn g_centers(&self) -> Vec<f64> {
        (0..self.ng).map(|j| self.g_center(j)).collect()
    }

    /// Whether row `j` carries the reset condition. A centre exactly at
    /// `g_F` is treated as Dirichlet.
    #[inline]
    pub fn is_reset_row(&self, j: usize) -> bool {
        self.g_center(j) > self.g_f
    }

    /// Index of the cell whose closed interval contains `g_F`.
    pub fn j_f(&self) -> usize {
        ((self.g_f / self.h_g) as usize).min(self.ng - 1)
    }

    /// Checks that the Gaussian tail beyond `g_max` is negligible for this
    /// coupling (`g_max ≥ g_in + 6 √a`).
    pub fn check_coupling(&self, coupling: &CouplingState) -> Result<()> {
        let needed = coupling.g_in + 6.0 * coupling.a.sqrt();
        if self.g_max < needed {
            return Err(invalid(
                "g_max",
                format!(
                    "{} truncates the conductance tail; need >= g_in + 6 sqrt(a) = {needed:.4}",
                    self.g_max
                ),
            ));
        }
        Ok(())
    }
}

/// Cell-averaged probability density on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nv() {
            let v = grid.v_center(i);
            values.extend((0..grid.ng()).map(|j| f(v, grid.g_center(j))));
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Rescales to unit mass. Fails on an empty (zero-mass) field.
    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::NonFinite(format!(
                "cannot normalise field of mass {mass}"
            )));
        }
        self.values.iter_mut().for_each(|p| *p /= mass);
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ |p - other| h_v h_g`.
    pub fn l1_distance(&self, other: &DensityField) -> Result<f64> {
        if other.values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_area())
    }

    /// Writes the `v,g,p` table, one row per cell centre, `g` fastest.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "v,g,p")?;
        for i in 0..self.grid.nv() {
            let v = self.grid.v_center(i);
            for j in 0..self.grid.ng() {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e}",
                    v,
                    self.grid.g_center(j),
                    self.at(i, j)
                )?;
            }
        }
        Ok(())
    }

    /// Reads a `v,g,p` table written by [`DensityField::write_csv`] onto `grid`.
    pub fn read_csv<R: BufRead>(grid: Grid, input: R) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for (line_no, line) in input.lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let p = line
                .rsplit(',')
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    invalid("density_csv", format!("bad row {}: {line}", line_no + 1))
                })?;
            values.push(p);
        }
        Self::from_values(grid, values)
    }
}

/// `Σ p_{i,j} h_v h_g`, checking that the field lives on `grid`.
pub fn cell_mass(field: &DensityField, grid: &Grid) -> Result<f64> {
    if field.values.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: field.values.len(),
        });
    }
    Ok(field.values.iter().sum::<f64>() * grid.cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn small_grid_edges() {
        let g = build_grid(4, 4, 2.0, &params()).unwrap();
        assert_eq!(g.h_v(), 0.25);
        let edges: Vec<f64> = (0..=4).map(|k| g.v_edge(k)).collect();
        assert_eq!(edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.v_center(0), 0.125);
        assert_eq!(g.g_edge(4), 2.0);
    }

    #[test]
    fn fine_grid_steps() {
        let g = build_grid(128, 256, 8.0, &params()).unwrap();
        assert_eq!(g.h_v(), 1.0 / 128.0);
        assert_eq!(g.h_g(), 1.0 / 32.0);
        // g_F = 1/3 sits in cell [10/32, 11/32), whose centre 10.5/32 lies below it.
        assert_eq!(g.j_f(), 10);
        assert!(!g.is_reset_row(10) && g.is_reset_row(11));
    }

    #[test]
    fn rejects_vacuous_reset() {
        assert!(build_grid(8, 8, 0.25, &params()).is_err());
        assert!(build_grid(3, 8, 2.0, &params()).is_err());
    }

    #[test]
    fn coordinates_are_not_accumulated() {
        let g = build_grid(1000, 999, 7.3, &params()).unwrap();
        for j in 0..g.ng() {
            assert_eq!(g.g_center(j), (j as f64 + 0.5) * (7.3 / 999.0));
        }
        assert_eq!(g.g_edge(999), 7.3);
    }

    #[test]
    fn mass_examples() {
        let g = build_grid(16, 32, 4.0, &params()).unwrap();
        let uniform = DensityField::from_fn(g, |_, _| 1.0 / 4.0);
        assert!((cell_mass(&uniform, &g).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(cell_mass(&DensityField::zeros(g), &g).unwrap(), 0.0);
        let mut spike = DensityField::zeros(g);
        let k = g.index(3, 7);
        spike.values_mut()[k] = 1.0 / g.cell_area();
        assert!((cell_mass(&spike, &g).unwrap() - 1.0).abs() < 1e-14);
        let other = build_grid(8, 8, 4.0, &params()).unwrap();
        assert!(cell_mass(&spike, &other).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = build_grid(4, 5, 2.0, &params()).unwrap();
        let f = DensityField::from_fn(g, |v, gg| (v + 1.0) * (-gg).exp() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("v,g,p\n"));
        assert_eq!(text.lines().count(), 21);
        let back = DensityField::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
