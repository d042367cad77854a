//! Monitored functionals: moments, entropies, distances to the Maxwellian,
//! weighted `L^q` norms, and log-linear rate fits.
//!
//! All quadratures are midpoint rules on the cell centres, so they are exact
//! for cell-constant integrands and linear in the field.

use std::f64::consts::{PI, SQRT_2};

use libm::{erf, erfc};

use crate::error::{invalid, Error, Result};
use crate::grid::{DensityField, Grid};
use crate::model::{CouplingState, ModelParams};
use crate::steady::firing_profile;

/// Densities below this are treated as empty in logarithms and quotients.
pub const P_FLOOR: f64 = 1e-300;

/// Standard normal probability of `(lo, hi)`, accurate in both tails.
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo / SQRT_2) - erfc(hi / SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi / SQRT_2) - erfc(-lo / SQRT_2))
    } else {
        0.5 * (erf(hi / SQRT_2) - erf(lo / SQRT_2))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `Z(g_in) = ∫_0^∞ exp(-(g - g_in)²/2a) dg`.
pub fn maxwellian_z(coupling: &CouplingState) -> f64 {
    let s = coupling.a.sqrt();
    (2.0 * PI * coupling.a).sqrt() * normal_cdf(coupling.g_in / s)
}

/// Same integral truncated to `(0, g_max)`.
pub fn maxwellian_z_truncated(coupling: &CouplingState, g_max: f64) -> f64 {
    let s = coupling.a.sqrt();
    (2.0 * PI * coupling.a).sqrt()
        * normal_interval(-coupling.g_in / s, (g_max - coupling.g_in) / s)
}

/// Admissible range `[√(aπ/2), √(2aπ)]` of the normalisation constant.
pub fn z_bounds(a: f64) -> (f64, f64) {
    ((a * PI / 2.0).sqrt(), (2.0 * a * PI).sqrt())
}

/// Bracket on the first conductance moment of a steady state:
/// `g_in + c √a e^{-g_in²/2a}` with `c = 1/√(2π)` below and `√(2/π)` above.
pub fn first_moment_bracket(coupling: &CouplingState) -> (f64, f64) {
    let CouplingState { g_in, a, .. } = *coupling;
    let tail = (-g_in * g_in / (2.0 * a)).exp();
    (
        g_in + (a / (2.0 * PI)).sqrt() * tail,
        g_in + (2.0 * a / PI).sqrt() * tail,
    )
}

/// Cell averages of the Maxwellian `M(g) ∝ exp(-(g - g_in)²/2a)`,
/// renormalised to unit mass on `(0, g_max)`.
pub fn maxwellian_cells(coupling: &CouplingState, grid: &Grid) -> Vec<f64> {
    let s = coupling.a.sqrt();
    let z = |g: f64| (g - coupling.g_in) / s;
    let total = normal_interval(z(0.0), z(grid.g_max()));
    (0..grid.ng())
        .map(|j| normal_interval(z(grid.g_edge(j)), z(grid.g_edge(j + 1))) / (total * grid.h_g()))
        .collect()
}

/// Least-squares fit of `φ_j ≈ w_j / Z` with `w_j = exp(-(g_j - g_in)²/2a)`.
pub fn fit_normalization(marginal: &[f64], coupling: &CouplingState, grid: &Grid) -> f64 {
    let (mut ww, mut wp) = (0.0, 0.0);
    for (j, phi) in marginal.iter().enumerate() {
        let d = grid.g_center(j) - coupling.g_in;
        let w = (-d * d / (2.0 * coupling.a)).exp();
        ww += w * w;
        wp += w * phi;
    }
    ww / wp
}

/// `Σ |φ_j - M_j| h_g` against the truncated, renormalised Maxwellian.
pub fn marginal_l1_error(marginal: &[f64], coupling: &CouplingState, grid: &Grid) -> f64 {
    maxwellian_cells(coupling, grid)
        .iter()
        .zip(marginal)
        .map(|(m, phi)| (m - phi).abs())
        .sum::<f64>()
        * grid.h_g()
}

/// Moments of a density.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `ψ = ∫∫ v p`.
    pub psi: f64,
    /// `h_k = ∫∫ g^k p` for `k = 0..=K`; `h_0` is the mass.
    pub h: Vec<f64>,
    /// `∫∫ g v p`.
    pub cross: f64,
    /// Wall trace `f = ∫ p(v, 0) dv`, read from the first conductance cell.
    pub wall_trace: f64,
}

pub fn moments(field: &DensityField, max_order: usize) -> Result<Moments> {
    if max_order < 2 {
        return Err(invalid(
            "K",
            format!("need max moment order >= 2, got {max_order}"),
        ));
    }
    let grid = field.grid();
    let area = grid.cell_area();
    let mut h = vec![0.0; max_order + 1];
    let (mut psi, mut cross, mut wall) = (0.0, 0.0, 0.0);
    let mut powers = vec![0.0; max_order + 1];
    for j in 0..grid.ng() {
        let g = grid.g_center(j);
        powers[0] = 1.0;
        for k in 1..=max_order {
            powers[k] = powers[k - 1] * g;
        }
        let (mut col_mass, mut col_v) = (0.0, 0.0);
        for i in 0..grid.nv() {
            let p = field.at(i, j);
            col_mass += p;
            col_v += grid.v_center(i) * p;
        }
        for k in 0..=max_order {
            h[k] += powers[k] * col_mass;
        }
        psi += col_v;
        cross += g * col_v;
        if j == 0 {
            wall = col_mass;
        }
    }
    h.iter_mut().for_each(|v| *v *= area);
    Ok(Moments {
        psi: psi * area,
        h,
        cross: cross * area,
        wall_trace: wall * grid.h_v(),
    })
}

/// Entropy-type quantities controlled along the evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyFunctionals {
    /// `∫∫ |ln p| p`.
    pub abs_log: f64,
    /// `∫_{g > g_F} N(g) ln(g V_E / (g V_E - g V_F - g_L V_F)) dg ≥ 0`.
    pub boundary_flux: f64,
    /// `∫∫ a |∂_g p|² / p`.
    pub fisher: f64,
}

pub fn entropy_functionals(
    field: &DensityField,
    coupling: &CouplingState,
    params: &ModelParams,
) -> EntropyFunctionals {
    let grid = field.grid();
    let (ng, h_g) = (grid.ng(), grid.h_g());
    let area = grid.cell_area();

    let abs_log = field
        .values()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|&p| p * p.max(P_FLOOR).ln().abs())
        .sum::<f64>()
        * area;

    let profile = firing_profile(field, params);
    let boundary_flux = profile
        .per_cell
        .iter()
        .enumerate()
        .filter(|(j, _)| grid.is_reset_row(*j))
        .map(|(j, n)| n * boundary_log_factor(grid.g_center(j), params))
        .sum::<f64>()
        * h_g;

    let mut fisher = 0.0;
    for col in field.values().chunks(ng) {
        for j in 0..ng {
            let p = col[j];
            if p <= P_FLOOR {
                continue;
            }
            let dp = if j == 0 {
                (col[1] - col[0]) / h_g
            } else if j + 1 == ng {
                (col[ng - 1] - col[ng - 2]) / h_g
            } else {
                (col[j + 1] - col[j - 1]) / (2.0 * h_g)
            };
            fisher += dp * dp / p;
        }
    }
    EntropyFunctionals {
        abs_log,
        boundary_flux,
        fisher: coupling.a * fisher * area,
    }
}

/// `ln(g V_E / (g V_E - g V_F - g_L V_F))`, positive for `g > g_F`.
pub fn boundary_log_factor(g: f64, params: &ModelParams) -> f64 {
    (g * params.v_e / (g * (params.v_e - params.v_f) - params.g_l * params.v_f)).ln()
}

/// Centred chi-square distance `∫ M (φ/M - 1)² dg` to the truncated,
/// renormalised Maxwellian.
pub fn chi2_distance(marginal: &[f64], coupling: &CouplingState, grid: &Grid) -> f64 {
    maxwellian_cells(coupling, grid)
        .iter()
        .zip(marginal)
        .map(|(&m, &phi)| {
            if m > 0.0 {
                (phi - m) * (phi - m) / m
            } else if phi == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .sum::<f64>()
        * grid.h_g()
}

/// `∫∫ (1+g)^{ℓ+q-1} p^q`.
pub fn lq_monitor(field: &DensityField, q: f64, ell: f64) -> f64 {
    let grid = field.grid();
    let ng = grid.ng();
    let weights: Vec<f64> = (0..ng)
        .map(|j| (1.0 + grid.g_center(j)).powf(ell + q - 1.0))
        .collect();
    field
        .values()
        .chunks(ng)
        .map(|col| {
            col.iter()
                .zip(&weights)
                .map(|(p, w)| w * p.max(0.0).powf(q))
                .sum::<f64>()
        })
        .sum::<f64>()
        * grid.cell_area()
}

/// Least-squares fit of `ln y = intercept + rate · t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    /// Root-mean-square residual of `ln y` about the fitted line.
    pub rms_residual: f64,
    /// Standard error of the fitted rate.
    pub rate_stderr: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Minimum samples for a rate fit.
pub const MIN_FIT_SAMPLES: usize = 5;

/// Fits over samples with `t` in `[t0, t1]`.
pub fn fit_rate(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let (t0, t1) = window;
    let mut xs = Vec::new();
    let mut ls = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < t0 || ti > t1 {
            continue;
        }
        if !(yi > 0.0 && yi.is_finite()) {
            return Err(Error::InsufficientSamples {
                needed: MIN_FIT_SAMPLES,
                found: 0,
            });
        }
        xs.push(ti);
        ls.push(yi.ln());
    }
    fit_line(&xs, &ls).map(|(rate, intercept, rms, stderr)| RateFit {
        rate,
        intercept,
        rms_residual: rms,
        rate_stderr: stderr,
        window,
        samples: xs.len(),
    })
}

/// Rate fit over the trailing 80% of the time span.
pub fn fit_rate_default(t: &[f64], y: &[f64]) -> Result<RateFit> {
    let (first, last) = match (t.first(), t.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return Err(Error::InsufficientSamples {
                needed: MIN_FIT_SAMPLES,
                found: 0,
            })
        }
    };
    fit_rate(t, y, (first + 0.2 * (last - first), last))
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, rms, stderr(b))`.
pub(crate) fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = xs.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: n,
        });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: 1,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let rms = (sse / nf).sqrt();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    Ok((slope, intercept, rms, stderr))
}

/// Power-law exponent `b` in `y ≈ c t^b`, fitted on samples with `t` in the window.
pub fn fit_power_law(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let (lt, ly): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(ti, _)| **ti >= window.0 && **ti <= window.1 && **ti > 0.0)
        .map(|(ti, yi)| (ti.ln(), *yi))
        .unzip();
    fit_rate(&lt, &ly, (f64::NEG_INFINITY, f64::INFINITY)).map(|fit| RateFit { window, ..fit })
}

/// Kolmogorov–Smirnov distance between an empirical sample and a CDF.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// CDF of the Maxwellian truncated to `(0, g_max)`.
pub fn truncated_maxwellian_cdf(coupling: &CouplingState, g_max: f64) -> impl Fn(f64) -> f64 {
    let s = coupling.a.sqrt();
    let g_in = coupling.g_in;
    let lo = -g_in / s;
    let total = normal_interval(lo, (g_max - g_in) / s);
    move |g: f64| {
        if g <= 0.0 {
            0.0
        } else if g >= g_max {
            1.0
        } else {
            normal_interval(lo, (g - g_in) / s) / total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn gauss_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    fn setup(nv: usize, ng: usize, g_max: f64) -> (Grid, CouplingState, ModelParams) {
        let params = ModelParams::default();
        let grid = build_grid(nv, ng, g_max, &params).unwrap();
        (grid, CouplingState::frozen(1.0, 0.5).unwrap(), params)
    }

    fn maxwellian_field(grid: &Grid, coupling: &CouplingState) -> DensityField {
        let cells = maxwellian_cells(coupling, grid);
        let mut field = DensityField::zeros(*grid);
        let (nv, ng) = (grid.nv(), grid.ng());
        for i in 0..nv {
            for j in 0..ng {
                field.values_mut()[grid.index(i, j)] = cells[j] / grid.v_max();
            }
        }
        field
    }

    #[test]
    fn normal_interval_matches_complement_in_tails() {
        assert!((normal_interval(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-14);
        // upper tail stays accurate where 1 - cdf would cancel
        let tail = normal_interval(9.0, f64::INFINITY);
        assert!((tail / 1.128_588_405_953_842_2e-19 - 1.0).abs() < 1e-10);
        assert!((normal_interval(-f64::INFINITY, -9.0) - tail).abs() < 1e-30);
    }

    #[test]
    fn maxwellian_cells_have_unit_mass() {
        let (grid, c, _) = setup(8, 64, 8.0);
        let m: f64 = maxwellian_cells(&c, &grid).iter().sum::<f64>() * grid.h_g();
        assert!((m - 1.0).abs() < 1e-13);
    }

    #[test]
    fn maxwellian_z_at_zero_input_is_half_gaussian() {
        let c = CouplingState::frozen(0.0, 2.0).unwrap();
        assert!((maxwellian_z(&c) - (PI * 2.0 / 2.0).sqrt()).abs() < 1e-14);
        let (lo, hi) = z_bounds(2.0);
        let z = maxwellian_z(&CouplingState::frozen(3.0, 2.0).unwrap());
        assert!(lo <= z && z <= hi);
    }

    #[test]
    fn fitted_normalization_recovers_exact_constant() {
        let (grid, c, _) = setup(8, 200, 8.0);
        let z = 1.7;
        let phi: Vec<f64> = (0..grid.ng())
            .map(|j| (-(grid.g_center(j) - c.g_in).powi(2) / (2.0 * c.a)).exp() / z)
            .collect();
        assert!((fit_normalization(&phi, &c, &grid) - z).abs() < 1e-12);
    }

    #[test]
    fn moments_of_separable_field() {
        // uniform in v on (0,1) times uniform in g on (0, 4): psi = 1/2, h1 = 2,
        // h2 = 16/3 up to midpoint error h²/12, cross = 1
        let params = ModelParams::default();
        let grid = build_grid(16, 64, 4.0, &params).unwrap();
        let field = DensityField::from_fn(grid, |_, _| 0.25);
        let m = moments(&field, 4).unwrap();
        assert!((m.h[0] - 1.0).abs() < 1e-14);
        assert!((m.psi - 0.5).abs() < 1e-14);
        assert!((m.h[1] - 2.0).abs() < 1e-13);
        let h = grid.h_g();
        assert!((m.h[2] - (16.0 / 3.0 - h * h / 12.0)).abs() < 1e-12);
        assert!((m.cross - 1.0).abs() < 1e-13);
        assert!((m.wall_trace - 0.25).abs() < 1e-14);
        assert!(moments(&field, 1).is_err());
    }

    #[test]
    fn fisher_term_of_maxwellian_matches_truncated_variance() {
        // For p = M(g)/V_F, the Fisher term is Var_M(g)/a for the truncated normal.
        let (grid, c, params) = setup(4, 4096, 8.0);
        let field = maxwellian_field(&grid, &c);
        let s = c.a.sqrt();
        let (alpha, beta) = (-c.g_in / s, (grid.g_max() - c.g_in) / s);
        let mass = normal_interval(alpha, beta);
        let expected = 1.0 + (alpha * gauss_pdf(alpha) - beta * gauss_pdf(beta)) / mass;
        let e = entropy_functionals(&field, &c, &params);
        assert!(
            (e.fisher - expected).abs() < 2e-3,
            "{} vs {}",
            e.fisher,
            expected
        );
    }

    #[test]
    fn chi2_of_shifted_maxwellian_matches_closed_form() {
        let (grid, c, _) = setup(4, 4096, 10.0);
        let shifted = CouplingState::frozen(1.4, c.a).unwrap();
        let phi = maxwellian_cells(&shifted, &grid);
        // ∫ φ²/M - 1 with both truncated to (0, g_max)
        let z = |mu: f64| {
            let s = c.a.sqrt();
            normal_interval(-mu / s, (grid.g_max() - mu) / s)
        };
        let d = shifted.g_in - c.g_in;
        let expected = z(c.g_in) / z(shifted.g_in).powi(2)
            * (d * d / c.a).exp()
            * z(2.0 * shifted.g_in - c.g_in)
            - 1.0;
        let chi2 = chi2_distance(&phi, &c, &grid);
        assert!((chi2 / expected - 1.0).abs() < 1e-4, "{chi2} vs {expected}");
        assert!(chi2_distance(&maxwellian_cells(&c, &grid), &c, &grid) < 1e-28);
    }

    #[test]
    fn boundary_factor_positive_above_crossover() {
        let params = ModelParams::default();
        for g in [0.34, 0.5, 1.0, 10.0, 1e3] {
            assert!(boundary_log_factor(g, &params) > 0.0);
        }
    }

    #[test]
    fn lq_monitor_reduces_to_weighted_mass_at_q_one() {
        let (grid, c, _) = setup(8, 128, 8.0);
        let field = maxwellian_field(&grid, &c);
        let m = moments(&field, 2).unwrap();
        assert!((lq_monitor(&field, 1.0, 1.0) - (m.h[0] + m.h[1])).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_recovers_exponential() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = fit_rate_default(&t, &y).unwrap();
        assert!((fit.rate + 0.7).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
        assert_eq!(fit.samples, 40);
    }

    #[test]
    fn rate_fit_rejects_short_or_nonpositive_windows() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert!(fit_rate(&t, &[1.0; 4], (0.0, 3.0)).is_err());
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let mut y = vec![1.0; 10];
        y[5] = 0.0;
        assert!(fit_rate(&t, &y, (0.0, 9.0)).is_err());
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let t: Vec<f64> = (1..=40).map(|k| k as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * t.powf(-1.5)).collect();
        let fit = fit_power_law(&t, &y, (2.0, 10.0)).unwrap();
        assert!((fit.rate + 1.5).abs() < 1e-12);
    }

    #[test]
    fn ks_distance_of_quantiles_is_half_step() {
        let n = 100;
        let mut xs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn chi2_nonnegative_and_zero_only_at_maxwellian(shift in -0.5f64..0.5, g_in in 0.6f64..3.0) {
            let (grid, _, _) = setup(4, 256, 12.0);
            let c = CouplingState::frozen(g_in, 0.5).unwrap();
            let other = CouplingState::frozen(g_in + shift, 0.5).unwrap();
            let chi2 = chi2_distance(&maxwellian_cells(&other, &grid), &c, &grid);
            prop_assert!(chi2 >= 0.0);
            if shift.abs() > 1e-3 {
                prop_assert!(chi2 > 0.0);
            }
        }

        #[test]
        fn first_moment_bracket_ordered(g_in in 0.0f64..5.0, a in 0.01f64..5.0) {
            let c = CouplingState::frozen(g_in, a).unwrap();
            let (lo, hi) = first_moment_bracket(&c);
            prop_assert!(g_in <= lo && lo <= hi);
        }
    }
}
