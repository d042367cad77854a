//! The firing-rate map: assumed network rate in, steady firing rate out.
//! Network steady states are its fixed points.

use std::io::Write;

use rayon::prelude::*;

use crate::diagnostics::first_moment_bracket;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::model::{coupling_from_rate, CouplingState, ModelParams};
use crate::steady::{
    assemble, firing_profile, reset_trace_rate, solve_null_vector, solve_null_vector_from,
};

/// Search stops at this rate when no sign change has been found.
pub const X_MAX: f64 = 100.0;
/// Iteration cap for bisection.
pub const MAX_BISECTIONS: usize = 60;

/// One evaluation of the map.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSample {
    pub x: f64,
    /// Threshold outflow of the frozen steady state.
    pub psi: f64,
    /// Same rate read from the reset trace, `V_E ∫ g p(0, g) dg`.
    pub psi_alt: f64,
    /// Analytic bracket on `V_F · psi`.
    pub lower: f64,
    pub upper: f64,
    pub residual: f64,
}

impl PsiSample {
    /// Whether `V_F · psi` lies in `[lower, upper]` widened by `slack` times
    /// the magnitude of each bound.
    pub fn within_bracket(&self, v_f: f64, slack: f64) -> bool {
        let y = v_f * self.psi;
        y >= self.lower - slack * self.lower.abs() && y <= self.upper + slack * self.upper.abs()
    }
}

/// Analytic bracket `[lower, upper]` on `V_F Ψ`. The lower bound carries the
/// leak conductance, `-g_L V_F`, since it comes from `∫∫ g_L v p ≤ g_L V_F`.
pub fn psi_bracket(coupling: &CouplingState, params: &ModelParams) -> (f64, f64) {
    let (h_lo, h_hi) = first_moment_bracket(coupling);
    (
        -params.g_l * params.v_f + (params.v_e - params.v_f) * h_lo,
        params.v_e * h_hi,
    )
}

pub fn evaluate_psi(
    x: f64,
    params: &ModelParams,
    grid: &Grid,
    nu: f64,
    tol: f64,
) -> Result<PsiSample> {
    evaluate_from(x, params, grid, nu, tol, None).map(|(s, _)| s)
}

fn evaluate_from(
    x: f64,
    params: &ModelParams,
    grid: &Grid,
    nu: f64,
    tol: f64,
    start: Option<Vec<f64>>,
) -> Result<(PsiSample, Vec<f64>)> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(invalid(
            "x",
            format!("input rate must be finite and >= 0, got {x}"),
        ));
    }
    let coupling = coupling_from_rate(x, nu, params)?;
    grid.check_coupling(&coupling)?;
    let op = assemble(grid, &coupling, params)?;
    let max_iter = 500;
    let sol = match start {
        Some(q) => solve_null_vector_from(&op, q, tol, max_iter)?,
        None => solve_null_vector(&op, tol, max_iter)?,
    };
    let (lower, upper) = psi_bracket(&coupling, params);
    let sample = PsiSample {
        x,
        psi: firing_profile(&sol.density, params).total,
        psi_alt: reset_trace_rate(&sol.density, params),
        lower,
        upper,
        residual: sol.stats.residual,
    };
    Ok((sample, sol.q))
}

/// Default scan points: `0` and `0.1 · 2^k` for `k = 0..=8`.
pub fn default_ladder() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=8).map(|k| 0.1 * f64::powi(2.0, k)))
        .collect()
}

#[derive(Debug)]
pub struct PsiScan {
    /// Successful samples, in input order.
    pub samples: Vec<PsiSample>,
    /// Inputs whose evaluation failed, with the reason.
    pub failures: Vec<(f64, Error)>,
    /// Consecutive successful inputs across which `Ψ(x) - x` changes sign.
    pub sign_changes: Vec<(f64, f64)>,
}

pub fn scan_psi(
    xs: &[f64],
    params: &ModelParams,
    grid: &Grid,
    nu: f64,
    tol: f64,
) -> Result<PsiScan> {
    if xs.is_empty() {
        return Err(invalid("xs", "scan needs at least one rate"));
    }
    if xs.iter().any(|x| !(*x >= 0.0)) || xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("xs", "rates must be nonnegative and sorted"));
    }
    let results: Vec<Result<PsiSample>> = xs
        .par_iter()
        .map(|&x| evaluate_psi(x, params, grid, nu, tol))
        .collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (x, r) in xs.iter().zip(results) {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => failures.push((*x, e)),
        }
    }
    let sign_changes = samples
        .windows(2)
        .filter(|w| (w[0].psi - w[0].x).signum() != (w[1].psi - w[1].x).signum())
        .map(|w| (w[0].x, w[1].x))
        .collect();
    Ok(PsiScan {
        samples,
        failures,
        sign_changes,
    })
}

pub fn write_scan_csv<W: Write>(samples: &[PsiSample], mut out: W) -> Result<()> {
    writeln!(out, "x,psi,lower,upper,residual")?;
    for s in samples {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.x, s.psi, s.lower, s.upper, s.residual
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub rate: f64,
    /// `Ψ(rate) - rate`.
    pub defect: f64,
    pub evaluations: usize,
    pub sample: PsiSample,
}

/// Bisection on `Ψ(x) - x` over a bracket with a sign change.
pub fn find_fixed_point(
    bracket: (f64, f64),
    params: &ModelParams,
    grid: &Grid,
    nu: f64,
    rate_tol: f64,
    solver_tol: f64,
) -> Result<FixedPoint> {
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo) {
        return Err(invalid(
            "bracket",
            format!("need 0 <= lo < hi, got [{lo}, {hi}]"),
        ));
    }
    let (s_lo, q_lo) = evaluate_from(lo, params, grid, nu, solver_tol, None)?;
    let (s_hi, _) = evaluate_from(hi, params, grid, nu, solver_tol, None)?;
    let (f_lo, f_hi) = (s_lo.psi - lo, s_hi.psi - hi);
    let mut evaluations = 2;
    for (s, f) in [(&s_lo, f_lo), (&s_hi, f_hi)] {
        if f.abs() <= rate_tol {
            return Ok(FixedPoint {
                rate: s.x,
                defect: f,
                evaluations,
                sample: s.clone(),
            });
        }
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::InvalidBracket { lo, hi, f_lo, f_hi });
    }
    let lo_positive = f_lo > 0.0;
    let mut warm = q_lo;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let (s, q) = evaluate_from(mid, params, grid, nu, solver_tol, Some(warm))?;
        warm = q;
        evaluations += 1;
        let f = s.psi - mid;
        if f.abs() <= rate_tol {
            return Ok(FixedPoint {
                rate: mid,
                defect: f,
                evaluations,
                sample: s,
            });
        }
        if (f > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_BISECTIONS,
        residual: hi - lo,
    })
}

/// Outcome of a bracket search followed by bisection.
#[derive(Debug, Clone, PartialEq)]
pub enum FixedPointSearch {
    Found(FixedPoint),
    /// `Ψ(x) - x` kept one sign on every scanned rate up to `x_max`.
    NoneInRange {
        x_max: f64,
    },
}

/// Walks the default ladder, then doubles up to [`X_MAX`], and bisects the
/// first sign change. The walk stops early at the last rate whose
/// conductance tail still fits on `grid`.
pub fn search_fixed_point(
    params: &ModelParams,
    grid: &Grid,
    nu: f64,
    rate_tol: f64,
    solver_tol: f64,
) -> Result<FixedPointSearch> {
    let mut xs = default_ladder();
    while *xs.last().unwrap() * 2.0 <= X_MAX {
        xs.push(xs.last().unwrap() * 2.0);
    }
    let mut prev: Option<PsiSample> = None;
    for x in xs {
        let coupling = coupling_from_rate(x, nu, params)?;
        if let (Err(_), Some(p)) = (grid.check_coupling(&coupling), &prev) {
            return Ok(FixedPointSearch::NoneInRange { x_max: p.x });
        }
        let s = evaluate_psi(x, params, grid, nu, solver_tol)?;
        if let Some(p) = &prev {
            if (p.psi - p.x).signum() != (s.psi - s.x).signum() {
                return find_fixed_point((p.x, s.x), params, grid, nu, rate_tol, solver_tol)
                    .map(FixedPointSearch::Found);
            }
        }
        prev = Some(s);
    }
    Ok(FixedPointSearch::NoneInRange { x_max: X_MAX })
}
