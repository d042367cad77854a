//! Stationary linear problem: frozen coupling, nonnegative null vector.

mod operator;
mod solve;

pub(crate) use operator::gaussian_ratio;
pub use operator::{assemble, DiscreteOperator, A_MIN};
pub use solve::{SolveStats, DEFAULT_TOL, SHIFT_FACTOR};

use crate::error::Result;
use crate::grid::{DensityField, Grid};
use crate::model::{flux_v, CouplingState, ModelParams};

/// Normalised steady density together with its symmetrized unknown.
#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub density: DensityField,
    /// `q = p / w`, normalised with the density.
    pub q: Vec<f64>,
    pub stats: SolveStats,
}

pub fn solve_null_vector(
    op: &DiscreteOperator,
    tol: f64,
    max_iter: usize,
) -> Result<SteadySolution> {
    solve_null_vector_from(op, vec![1.0; op.dimension()], tol, max_iter)
}

pub fn solve_null_vector_from(
    op: &DiscreteOperator,
    initial: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SteadySolution> {
    let (mut q, stats) = solve::inverse_iteration(op, initial, tol, max_iter)?;
    let ng = op.grid.ng();
    let values: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(k, q)| q * op.weight[k % ng])
        .collect();
    let mut density = DensityField::from_values(op.grid, values)?;
    let mass = density.mass();
    density.normalize()?;
    q.iter_mut().for_each(|v| *v /= mass);
    Ok(SteadySolution { density, q, stats })
}

/// Outflow through the threshold edge, per conductance cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringProfile {
    /// `N_j`, a density in `g`; zero in rows with `g_j ≤ g_F`.
    pub per_cell: Vec<f64>,
    /// `𝒩 = Σ N_j h_g`.
    pub total: f64,
}

/// Discrete firing rate: the upwind flux `J_v(V_F, g_j) p_{I-1,j}` that the
/// scheme removes at threshold and reinjects at reset.
pub fn firing_profile(field: &DensityField, params: &ModelParams) -> FiringProfile {
    let grid = field.grid();
    let last = grid.nv() - 1;
    let per_cell: Vec<f64> = (0..grid.ng())
        .map(|j| {
            if grid.is_reset_row(j) {
                flux_v(params.v_f, grid.g_center(j), params) * field.at(last, j)
            } else {
                0.0
            }
        })
        .collect();
    let total = per_cell.iter().sum::<f64>() * grid.h_g();
    FiringProfile { per_cell, total }
}

/// `φ_j = Σ_i p_{i,j} h_v`.
pub fn marginal_g(field: &DensityField) -> Vec<f64> {
    let grid = field.grid();
    let mut phi = vec![0.0; grid.ng()];
    for col in field.values().chunks(grid.ng()) {
        phi.iter_mut().zip(col).for_each(|(m, p)| *m += p);
    }
    phi.iter_mut().for_each(|m| *m *= grid.h_v());
    phi
}

/// `Σ_j J_v(v_i, g_j) p_{i,j} h_g` at every voltage cell centre. For a
/// steady state this is constant in `v` up to discretisation error and
/// equal to the firing rate.
pub fn voltage_flux_profile(field: &DensityField, params: &ModelParams) -> Vec<f64> {
    let grid = field.grid();
    (0..grid.nv())
        .map(|i| {
            let v = grid.v_center(i);
            (0..grid.ng())
                .map(|j| flux_v(v, grid.g_center(j), params) * field.at(i, j))
                .sum::<f64>()
                * grid.h_g()
        })
        .collect()
}

/// `V_E Σ_j g_j p_{0,j} h_g`: firing rate read from the reset-side trace,
/// using the first voltage cell as the trace at `v = 0`.
pub fn reset_trace_rate(field: &DensityField, params: &ModelParams) -> f64 {
    let grid = field.grid();
    params.v_e
        * (0..grid.ng())
            .map(|j| grid.g_center(j) * field.at(0, j))
            .sum::<f64>()
        * grid.h_g()
}

/// Assembles and solves the frozen-coupling stationary problem.
pub fn solve_steady(
    grid: &Grid,
    coupling: &CouplingState,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<SteadySolution> {
    grid.check_coupling(coupling)?;
    let op = assemble(grid, coupling, params)?;
    solve_null_vector(&op, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{
        first_moment_bracket, fit_normalization, marginal_l1_error, moments, z_bounds,
    };
    use crate::grid::build_grid;
    use crate::model::coupling_from_rate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(nv: usize, ng: usize) -> (Grid, CouplingState, ModelParams) {
        let params = ModelParams::default();
        let grid = build_grid(nv, ng, 8.0, &params).unwrap();
        let c = coupling_from_rate(0.0, 1.0, &params).unwrap();
        (grid, c, params)
    }

    /// Largest deviation of the voltage-flux profile from the firing rate, relative to it.
    fn flux_deviation(field: &DensityField, params: &ModelParams) -> f64 {
        let rate = firing_profile(field, params).total;
        voltage_flux_profile(field, params)
            .iter()
            .map(|x| (x - rate).abs())
            .fold(0.0, f64::max)
            / rate
    }

    #[test]
    fn solution_is_normalised_and_nonnegative() {
        let (grid, c, params) = linear(16, 32);
        let sol = solve_steady(&grid, &c, &params, DEFAULT_TOL, 200).unwrap();
        assert!((sol.density.mass() - 1.0).abs() < 1e-12);
        assert!(sol.density.min_value() >= 0.0);
        assert!(sol.stats.residual <= DEFAULT_TOL);
    }

    #[test]
    fn marginal_converges_to_maxwellian_at_second_order() {
        let (g1, c, params) = linear(32, 64);
        let (g2, _, _) = linear(64, 128);
        let e1 = marginal_l1_error(
            &marginal_g(&solve_steady(&g1, &c, &params, 1e-11, 200).unwrap().density),
            &c,
            &g1,
        );
        let e2 = marginal_l1_error(
            &marginal_g(&solve_steady(&g2, &c, &params, 1e-11, 200).unwrap().density),
            &c,
            &g2,
        );
        assert!(e1 < 2e-3, "{e1}");
        assert!((e2 / e1 - 0.25).abs() < 0.01, "{}", e2 / e1);
    }

    #[test]
    fn voltage_flux_is_nearly_constant_and_refines() {
        let (g1, c, params) = linear(32, 64);
        let (g2, _, _) = linear(64, 128);
        let s1 = flux_deviation(
            &solve_steady(&g1, &c, &params, 1e-11, 200).unwrap().density,
            &params,
        );
        let s2 = flux_deviation(
            &solve_steady(&g2, &c, &params, 1e-11, 200).unwrap().density,
            &params,
        );
        assert!(s1 < 0.05, "{s1}");
        assert!((s2 / s1 - 0.5).abs() < 0.05, "{}", s2 / s1);
    }

    #[test]
    fn normalization_and_first_moment_within_bounds() {
        let (grid, c, params) = linear(64, 128);
        let sol = solve_steady(&grid, &c, &params, 1e-11, 200).unwrap();
        let z = fit_normalization(&marginal_g(&sol.density), &c, &grid);
        let (lo, hi) = z_bounds(c.a);
        assert!(lo <= z && z <= hi);
        let h1 = moments(&sol.density, 2).unwrap().h[1];
        let (blo, bhi) = first_moment_bracket(&c);
        assert!(blo <= h1 && h1 <= bhi, "{h1} not in [{blo}, {bhi}]");
    }

    #[test]
    fn random_starts_converge_to_same_state() {
        let (grid, c, params) = linear(32, 64);
        let op = assemble(&grid, &c, &params).unwrap();
        let tol = 1e-11;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut draw = || {
            (0..op.dimension())
                .map(|_| rng.random_range(0.1..1.0))
                .collect::<Vec<_>>()
        };
        let a = solve_null_vector_from(&op, draw(), tol, 300).unwrap();
        let b = solve_null_vector_from(&op, draw(), tol, 300).unwrap();
        assert!(a.density.l1_distance(&b.density).unwrap() <= 10.0 * tol);
    }

    #[test]
    fn reset_trace_agrees_with_threshold_rate() {
        let (grid, c, params) = linear(64, 128);
        let sol = solve_steady(&grid, &c, &params, 1e-11, 200).unwrap();
        let rate = firing_profile(&sol.density, &params).total;
        let trace = reset_trace_rate(&sol.density, &params);
        assert!(((trace - rate) / rate).abs() < 0.01);
    }

    #[test]
    fn no_firing_without_mass_above_crossover() {
        let (grid, _, params) = linear(8, 32);
        let field = DensityField::from_fn(
            grid,
            |_, g| if g <= params.g_f() { 1.0 } else { 0.0 },
        );
        assert_eq!(firing_profile(&field, &params).total, 0.0);
    }

    #[test]
    fn rejects_truncated_tail() {
        let params = ModelParams::default();
        let grid = build_grid(8, 16, 3.0, &params).unwrap();
        let c = coupling_from_rate(0.0, 1.0, &params).unwrap();
        assert!(solve_steady(&grid, &c, &params, DEFAULT_TOL, 50).is_err());
    }
}
