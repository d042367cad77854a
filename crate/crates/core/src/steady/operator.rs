//! Assembly of the symmetrized finite-volume operator.
//!
//! With the Maxwellian weight `w_j = exp(-(g_j - g_in)² / 2a)` and the
//! symmetrized unknown `q = p / w`, each cell `(i, j)` balances
//!
//! ```text
//! (1/h_v) [J_{i+½,j} q_{i+½,j} - J_{i-½,j} q_{i-½,j}]
//!   - a/(σ_E h_g²) [μ⁺_j (q_{i,j+1} - q_{i,j}) - μ⁻_j (q_{i,j} - q_{i,j-1})] = 0
//! ```
//!
//! where `J_{i+½,j} = J_v(v_{i+½}, g_j)` is evaluated at the cell-centre
//! conductance, `q_{i+½,j}` is the upwind value, and
//! `μ^±_j = exp(-(g_{j±½} - g_in)² / 2a) / w_j` are the edge diffusion
//! weights divided by the row weight. This is the classical scheme with every
//! row divided by `w_j`, which keeps all coefficients of order one while the
//! density itself spans many decades.
//!
//! Boundary closures: Neumann in `g` (no diffusive flux through `g = 0` or
//! `g = g_max`); zero inflow at `v = 0` and `v = V_F` in rows with
//! `g_j ≤ g_F`; in rows with `g_j > g_F` the outflow through `v = V_F`
//! re-enters through `v = 0`.

use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::model::{flux_v, CouplingState, ModelParams};

/// Noise intensities below this are rejected: the operator would lose its
/// diffusion and with it the Neumann closure.
pub const A_MIN: f64 = 1e-12;

/// Sparse action of the symmetrized stationary operator on `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub(crate) grid: Grid,
    pub(crate) params: ModelParams,
    pub(crate) coupling: CouplingState,
    /// Diagonal entries, one per cell.
    pub(crate) diag: Vec<f64>,
    /// Coefficient of `q_{i-1,j}` in row `(i, j)`.
    pub(crate) west: Vec<f64>,
    /// Coefficient of `q_{i+1,j}` in row `(i, j)`.
    pub(crate) east: Vec<f64>,
    /// Coefficient of `q_{i,j-1}` in row `(i, j)`; zero for `j = 0`.
    pub(crate) south: Vec<f64>,
    /// Coefficient of `q_{i,j+1}` in row `(i, j)`; zero for `j = J-1`.
    pub(crate) north: Vec<f64>,
    /// Coefficient of `q_{I-1,j}` in row `(0, j)`: the reset reinjection.
    pub(crate) reset: Vec<f64>,
    /// Maxwellian row weights `w_j` (unnormalised, peak 1).
    pub(crate) weight: Vec<f64>,
}

/// `exp(-((x - g_in)² - (y - g_in)²) / 2a)`, evaluated without forming
/// either Gaussian separately.
#[inline]
pub(crate) fn gaussian_ratio(x: f64, y: f64, g_in: f64, a: f64) -> f64 {
    (-((x - y) * (x + y - 2.0 * g_in)) / (2.0 * a)).exp()
}

pub fn assemble(
    grid: &Grid,
    coupling: &CouplingState,
    params: &ModelParams,
) -> Result<DiscreteOperator> {
    if !(coupling.a.is_finite() && coupling.a >= A_MIN) {
        return Err(invalid(
            "a",
            format!("noise intensity {} below a_min = {A_MIN}", coupling.a),
        ));
    }
    if !(coupling.g_in.is_finite() && coupling.g_in >= 0.0) {
        return Err(invalid(
            "g_in",
            format!("must be finite and >= 0, got {}", coupling.g_in),
        ));
    }
    let (nv, ng) = (grid.nv(), grid.ng());
    let n = grid.len();
    let (g_in, a) = (coupling.g_in, coupling.a);
    let c_v = 1.0 / grid.h_v();
    let c_g = a / (params.sigma_e * grid.h_g() * grid.h_g());

    let weight: Vec<f64> = (0..ng)
        .map(|j| {
            let d = grid.g_center(j) - g_in;
            (-d * d / (2.0 * a)).exp()
        })
        .collect();
    let mut south = vec![0.0; ng];
    let mut north = vec![0.0; ng];
    let mut diffusion_diag = vec![0.0; ng];
    for j in 0..ng {
        let g = grid.g_center(j);
        if j + 1 < ng {
            let mu = c_g * gaussian_ratio(grid.g_edge(j + 1), g, g_in, a);
            north[j] = -mu;
            diffusion_diag[j] += mu;
        }
        if j > 0 {
            let mu = c_g * gaussian_ratio(grid.g_edge(j), g, g_in, a);
            south[j] = -mu;
            diffusion_diag[j] += mu;
        }
    }

    let mut diag = vec![0.0; n];
    let mut west = vec![0.0; n];
    let mut east = vec![0.0; n];
    let mut reset = vec![0.0; ng];
    for j in 0..ng {
        let g = grid.g_center(j);
        for i in 0..nv {
            diag[grid.index(i, j)] = diffusion_diag[j];
        }
        // Interior v-edges between cells i and i+1.
        for i in 0..nv - 1 {
            let flux = flux_v(grid.v_edge(i + 1), g, params);
            if flux >= 0.0 {
                diag[grid.index(i, j)] += c_v * flux;
                west[grid.index(i + 1, j)] = -c_v * flux;
            } else {
                east[grid.index(i, j)] = c_v * flux;
                diag[grid.index(i + 1, j)] -= c_v * flux;
            }
        }
        if grid.is_reset_row(j) {
            let out = flux_v(params.v_f, g, params);
            diag[grid.index(nv - 1, j)] += c_v * out;
            reset[j] = -c_v * out;
        }
    }

    Ok(DiscreteOperator {
        grid: *grid,
        params: *params,
        coupling: *coupling,
        diag,
        west,
        east,
        south,
        north,
        reset,
        weight,
    })
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coupling(&self) -> &CouplingState {
        &self.coupling
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dimension(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Maxwellian factors `w_j` linking `p = w q`.
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// `out = A q`.
    pub fn apply(&self, q: &[f64], out: &mut [f64]) {
        self.apply_shifted(q, 0.0, out);
    }

    /// `out = (A + shift I) q`.
    pub fn apply_shifted(&self, q: &[f64], shift: f64, out: &mut [f64]) {
        let (nv, ng) = (self.grid.nv(), self.grid.ng());
        for i in 0..nv {
            let base = i * ng;
            for j in 0..ng {
                let k = base + j;
                let mut s = (self.diag[k] + shift) * q[k];
                if j > 0 {
                    s += self.south[j] * q[k - 1];
                }
                if j + 1 < ng {
                    s += self.north[j] * q[k + 1];
                }
                if i > 0 {
                    s += self.west[k] * q[k - ng];
                }
                if i + 1 < nv {
                    s += self.east[k] * q[k + ng];
                }
                if i == 0 {
                    s += self.reset[j] * q[(nv - 1) * ng + j];
                }
                out[k] = s;
            }
        }
    }

    /// Visits every stored entry as `(row, col, value)`.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        let (nv, ng) = (self.grid.nv(), self.grid.ng());
        for i in 0..nv {
            for j in 0..ng {
                let k = self.grid.index(i, j);
                f(k, k, self.diag[k]);
                if j > 0 {
                    f(k, k - 1, self.south[j]);
                }
                if j + 1 < ng {
                    f(k, k + 1, self.north[j]);
                }
                if i > 0 {
                    f(k, k - ng, self.west[k]);
                }
                if i + 1 < nv {
                    f(k, k + ng, self.east[k]);
                }
                if i == 0 && self.reset[j] != 0.0 {
                    f(k, self.grid.index(nv - 1, j), self.reset[j]);
                }
            }
        }
    }

    /// Net mass rate per unit density in each cell: `Σ_rows w_row A[row, col] / w_col`.
    /// This is the transposed sum of the operator acting on `p`; conservation
    /// makes every entry vanish.
    pub fn mass_rate_defects(&self) -> Vec<f64> {
        let ng = self.grid.ng();
        let mut out = vec![0.0; self.dimension()];
        self.for_each_entry(|row, col, value| {
            out[col] += self.weight[row % ng] * value / self.weight[col % ng];
        });
        out
    }

    /// `Σ w_j |x_{i,j}| h_v h_g`, the mass of the density `w x`.
    pub fn weighted_norm(&self, x: &[f64]) -> f64 {
        let ng = self.grid.ng();
        x.chunks(ng)
            .map(|col| {
                col.iter()
                    .zip(&self.weight)
                    .map(|(x, w)| w * x.abs())
                    .sum::<f64>()
            })
            .sum::<f64>()
            * self.grid.cell_area()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::coupling_from_rate;

    fn setup(nv: usize, ng: usize) -> DiscreteOperator {
        let params = ModelParams::default();
        let grid = build_grid(nv, ng, 6.0, &params).unwrap();
        let coupling = coupling_from_rate(0.0, 1.0, &params).unwrap();
        assemble(&grid, &coupling, &params).unwrap()
    }

    #[test]
    fn conservative() {
        let op = setup(16, 24);
        let scale = op.diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        for d in op.mass_rate_defects() {
            assert!(d.abs() <= 1e-12 * scale, "defect {d}");
        }
    }

    #[test]
    fn m_matrix_sign_pattern() {
        let op = setup(8, 8);
        op.for_each_entry(|row, col, value| {
            if row == col {
                assert!(value > 0.0);
            } else {
                assert!(value <= 0.0, "({row},{col}) = {value}");
            }
        });
    }

    #[test]
    fn deterministic() {
        let params = ModelParams::default().with_coupling(0.7);
        let grid = build_grid(12, 20, 6.0, &params).unwrap();
        let c = coupling_from_rate(1.3, 1.0, &params).unwrap();
        assert_eq!(
            assemble(&grid, &c, &params).unwrap(),
            assemble(&grid, &c, &params).unwrap()
        );
    }

    #[test]
    fn reset_only_above_crossover() {
        let op = setup(8, 24);
        for j in 0..24 {
            assert_eq!(op.reset[j] != 0.0, op.grid.is_reset_row(j));
        }
    }

    #[test]
    fn rejects_degenerate_noise() {
        let params = ModelParams::default();
        let grid = build_grid(8, 8, 6.0, &params).unwrap();
        let c = CouplingState {
            total_rate: 0.0,
            g_in: 1.0,
            a: 1e-14,
        };
        assert!(assemble(&grid, &c, &params).is_err());
    }

    #[test]
    fn apply_matches_entries() {
        let op = setup(6, 7);
        let n = op.dimension();
        let q: Vec<f64> = (0..n).map(|k| 1.0 + (k as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; n];
        op.apply(&q, &mut out);
        let mut dense = vec![0.0; n];
        op.for_each_entry(|r, c, v| dense[r] += v * q[c]);
        for k in 0..n {
            assert!((out[k] - dense[k]).abs() < 1e-12 * (1.0 + dense[k].abs()));
        }
    }
}
