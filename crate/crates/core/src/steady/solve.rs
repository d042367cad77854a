//! Null-vector computation for the assembled operator.
//!
//! Shifted inverse iteration: each outer step solves
//! `(A + s I) y = x_k` and renormalises. `A + s I` is a nonsingular M-matrix,
//! so the inner solve uses symmetric block Gauss–Seidel with exact
//! tridiagonal solves along conductance lines as a preconditioner for
//! restarted GMRES. The sweeps form a regular splitting, so a few of them
//! applied after the Krylov solve keep the iterate nonnegative.

use crate::error::{Error, Result};
use crate::linalg::{gmres, TridiagonalLu};

use super::operator::DiscreteOperator;

/// Shift relative to the smallest diagonal entry.
pub const SHIFT_FACTOR: f64 = 1e-3;
/// Default relative residual.
pub const DEFAULT_TOL: f64 = 1e-10;
// Restarted GMRES stalls near 1e-13 in double precision; asking for less
// only burns iterations. The outer loop absorbs the remaining inner error.
const INNER_TOL_FLOOR: f64 = 1e-12;
const INNER_BUDGET: usize = 50 * GMRES_RESTART;
const GMRES_RESTART: usize = 40;
const POLISH_SWEEPS: usize = 2;

/// Symmetric line Gauss–Seidel for `(A + s I)`.
pub(crate) struct LineRelaxation<'a> {
    op: &'a DiscreteOperator,
    lines: Vec<TridiagonalLu>,
}

impl<'a> LineRelaxation<'a> {
    pub(crate) fn new(op: &'a DiscreteOperator, shift: f64) -> Self {
        let (nv, ng) = (op.grid.nv(), op.grid.ng());
        let lines = (0..nv)
            .map(|i| {
                let diag: Vec<f64> = op.diag[i * ng..(i + 1) * ng]
                    .iter()
                    .map(|d| d + shift)
                    .collect();
                TridiagonalLu::new(&op.south, &diag, &op.north)
            })
            .collect();
        Self { op, lines }
    }

    fn relax_line(&self, i: usize, b: &[f64], x: &mut [f64], line: &mut [f64]) {
        let op = self.op;
        let (nv, ng) = (op.grid.nv(), op.grid.ng());
        let base = i * ng;
        line.copy_from_slice(&b[base..base + ng]);
        if i > 0 {
            let (w, prev) = (&op.west[base..base + ng], &x[base - ng..base]);
            line.iter_mut()
                .zip(w.iter().zip(prev))
                .for_each(|(r, (c, y))| *r -= c * y);
        }
        if i + 1 < nv {
            let (e, next) = (&op.east[base..base + ng], &x[base + ng..base + 2 * ng]);
            line.iter_mut()
                .zip(e.iter().zip(next))
                .for_each(|(r, (c, y))| *r -= c * y);
        }
        if i == 0 {
            let last = &x[(nv - 1) * ng..nv * ng];
            line.iter_mut()
                .zip(op.reset.iter().zip(last))
                .for_each(|(r, (c, y))| *r -= c * y);
        }
        self.lines[i].solve_in_place(line);
        x[base..base + ng].copy_from_slice(line);
    }

    /// One forward and one backward sweep, in place.
    pub(crate) fn sweep(&self, b: &[f64], x: &mut [f64]) {
        let nv = self.op.grid.nv();
        let mut line = vec![0.0; self.op.grid.ng()];
        for i in 0..nv {
            self.relax_line(i, b, x, &mut line);
        }
        for i in (0..nv).rev() {
            self.relax_line(i, b, x, &mut line);
        }
    }
}

/// Diagnostics from a converged null-vector solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub krylov_iterations: usize,
    /// `‖A q‖_w / ‖q‖_w` at exit.
    pub residual: f64,
    pub shift: f64,
}

pub(crate) fn shift_for(op: &DiscreteOperator) -> f64 {
    SHIFT_FACTOR
        * op.diag
            .iter()
            .copied()
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min)
}

fn residual_ratio(op: &DiscreteOperator, q: &[f64], scratch: &mut [f64]) -> f64 {
    op.apply(q, scratch);
    op.weighted_norm(scratch) / op.weighted_norm(q)
}

/// Inverse iteration from `initial` (any strictly positive vector).
pub(crate) fn inverse_iteration(
    op: &DiscreteOperator,
    initial: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dimension();
    let shift = shift_for(op);
    let relax = LineRelaxation::new(op, shift);
    let mut x = initial;
    let norm = op.weighted_norm(&x);
    x.iter_mut().for_each(|v| *v /= norm);
    let mut scratch = vec![0.0; n];
    let mut residual = residual_ratio(op, &x, &mut scratch);
    let mut krylov_steps = 0;
    let mut outer = 0;
    // Inner accuracy needed so that the inner error, scaled back by the
    // shift, stays below the target residual.
    let inner_tol = (0.05 * tol / shift).clamp(INNER_TOL_FLOOR, 1e-3);
    while residual > tol {
        if outer >= max_iter {
            return Err(Error::NotConverged {
                iterations: outer,
                residual,
            });
        }
        outer += 1;
        let b = x.clone();
        // y = x / s solves the shifted system exactly along the null direction.
        let mut y: Vec<f64> = x.iter().map(|v| v / shift).collect();
        let stats = gmres(
            |v, out| op.apply_shifted(v, shift, out),
            |r, z| {
                z.iter_mut().for_each(|v| *v = 0.0);
                relax.sweep(r, z);
            },
            &b,
            &mut y,
            GMRES_RESTART,
            inner_tol,
            INNER_BUDGET,
        );
        krylov_steps += stats.iterations;
        // Krylov round-off can leave tiny negative entries in the far tails;
        // clamp them and polish with sweeps of the regular splitting, which
        // keep the iterate nonnegative.
        y.iter_mut().for_each(|v| *v = v.max(0.0));
        for _ in 0..POLISH_SWEEPS {
            relax.sweep(&b, &mut y);
        }
        let norm = op.weighted_norm(&y);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonFinite(format!(
                "inverse iteration produced norm {norm}"
            )));
        }
        x = y;
        x.iter_mut().for_each(|v| *v /= norm);
        residual = residual_ratio(op, &x, &mut scratch);
    }
    Ok((
        x,
        SolveStats {
            outer_iterations: outer,
            krylov_iterations: krylov_steps,
            residual,
            shift,
        },
    ))
}
