//! Acceptance checks. Each check runs its own experiment at a fixed
//! configuration and returns the measured values next to the verdict.
//!
//! Expensive shared inputs (the linear steady pair, the decay run) are built
//! once by [`LinearSteady::compute`] and [`DecayRun::compute`] and passed in.

use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{
    first_moment_bracket, fit_normalization, fit_power_law, fit_rate_default, ks_distance,
    marginal_l1_error, truncated_maxwellian_cdf, z_bounds,
};
use crate::error::Result;
use crate::evolution::{
    cfl_dt, default_initial, gaussian_initial, moment_residuals, run, step, DriftScheme,
    EvolutionState, RunOptions, RunOutput,
};
use crate::fixed_point::{default_ladder, find_fixed_point, scan_psi, PsiScan};
use crate::grid::{build_grid, DensityField, Grid};
use crate::model::{classify_regime, coupling_from_rate, CouplingState, ModelParams};
use crate::particle::{simulate, CouplingMode, OracleOptions, ParticleEnsemble};
use crate::steady::{
    assemble, firing_profile, marginal_g, solve_null_vector_from, solve_steady,
    voltage_flux_profile, SteadySolution, DEFAULT_TOL,
};

/// Verdict and measurements for one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub values: Vec<(&'static str, f64)>,
}

impl CriterionReport {
    fn new(id: u8, name: &'static str) -> Self {
        Self {
            id,
            name,
            passed: true,
            values: Vec::new(),
        }
    }

    fn record(&mut self, key: &'static str, value: f64) -> &mut Self {
        self.values.push((key, value));
        self
    }

    /// Records a value and folds `ok` into the verdict.
    fn require(&mut self, key: &'static str, value: f64, ok: bool) -> &mut Self {
        self.passed &= ok && value.is_finite();
        self.record(key, value)
    }

    fn failed(id: u8, name: &'static str, err: &dyn fmt::Display) -> Self {
        let mut r = Self::new(id, name);
        r.passed = false;
        eprintln!("criterion {id} ({name}) aborted: {err}");
        r
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<24} {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for (k, v) in &self.values {
            write!(f, " {k}={v:.6e}")?;
        }
        Ok(())
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn linear_params() -> ModelParams {
    ModelParams::default()
}

fn linear_coupling(params: &ModelParams) -> CouplingState {
    coupling_from_rate(0.0, 1.0, params).expect("default coupling is valid")
}

/// Linear steady solves at 128×256 and 256×512 on `(0, 8)`.
pub struct LinearSteady {
    pub params: ModelParams,
    pub coupling: CouplingState,
    pub coarse: (Grid, SteadySolution),
    pub fine: (Grid, SteadySolution),
    pub coarse_time: Duration,
}

impl LinearSteady {
    pub fn compute() -> Result<Self> {
        let params = linear_params();
        let coupling = linear_coupling(&params);
        let solve = |nv, ng| -> Result<(Grid, SteadySolution)> {
            let grid = build_grid(nv, ng, 8.0, &params)?;
            let sol = solve_steady(&grid, &coupling, &params, DEFAULT_TOL, 500)?;
            Ok((grid, sol))
        };
        let start = Instant::now();
        let coarse = solve(128, 256)?;
        let coarse_time = start.elapsed();
        let fine = solve(256, 512)?;
        Ok(Self {
            params,
            coupling,
            coarse,
            fine,
            coarse_time,
        })
    }

    fn marginal_error(&self, (grid, sol): &(Grid, SteadySolution)) -> f64 {
        marginal_l1_error(&marginal_g(&sol.density), &self.coupling, grid)
    }

    /// `(max_i |Φ_i - 𝒩| / 𝒩, max_i |Φ_i - mean Φ| / 𝒩)`.
    fn flux_deviation(&self, (_, sol): &(Grid, SteadySolution)) -> (f64, f64) {
        let rate = firing_profile(&sol.density, &self.params).total;
        let prof = voltage_flux_profile(&sol.density, &self.params);
        let mean = prof.iter().sum::<f64>() / prof.len() as f64;
        let dev = |c: f64| prof.iter().map(|x| (x - c).abs()).fold(0.0, f64::max) / rate;
        (dev(rate), dev(mean))
    }
}

pub fn maxwellian_marginal(s: &LinearSteady) -> CriterionReport {
    let mut r = CriterionReport::new(1, "maxwellian-marginal");
    let e1 = s.marginal_error(&s.coarse);
    let e2 = s.marginal_error(&s.fine);
    r.require("l1_error_128x256", e1, e1 <= 0.05)
        .require("refinement_ratio", e2 / e1, e2 <= 0.6 * e1)
        .record("l1_error_256x512", e2)
        .require(
            "runtime_s",
            secs(s.coarse_time),
            s.coarse_time.as_secs_f64() <= 60.0,
        );
    r
}

pub fn flux_constancy(s: &LinearSteady) -> CriterionReport {
    let mut r = CriterionReport::new(2, "flux-constancy");
    let (d1, m1) = s.flux_deviation(&s.coarse);
    let (d2, m2) = s.flux_deviation(&s.fine);
    r.require("deviation_128x256", d1, d1 <= 0.05)
        .require("refinement_ratio", d2 / d1, d2 <= 0.6 * d1)
        .record("deviation_256x512", d2)
        .require("spread_about_mean_128x256", m1, m1 <= 0.05)
        .record("spread_about_mean_ratio", m2 / m1);
    r
}

pub fn normalization_bounds(s: &LinearSteady) -> CriterionReport {
    let mut r = CriterionReport::new(3, "normalization-bounds");
    let (grid, sol) = &s.coarse;
    let z = fit_normalization(&marginal_g(&sol.density), &s.coupling, grid);
    let (z_lo, z_hi) = z_bounds(s.coupling.a);
    let h1 = crate::diagnostics::moments(&sol.density, 2)
        .map(|m| m.h[1])
        .unwrap_or(f64::NAN);
    let (b_lo, b_hi) = first_moment_bracket(&s.coupling);
    let slack = 0.05 * (b_hi - b_lo);
    r.require("z", z, z >= z_lo && z <= z_hi)
        .record("z_lower", z_lo)
        .record("z_upper", z_hi)
        .require("h1", h1, h1 >= b_lo - slack && h1 <= b_hi + slack)
        .record("h1_lower", b_lo)
        .record("h1_upper", b_hi);
    r
}

pub fn uniqueness(seed: u64) -> CriterionReport {
    let name = "uniqueness";
    let params = linear_params();
    let coupling = linear_coupling(&params);
    let attempt = || -> Result<CriterionReport> {
        let grid = build_grid(128, 256, 8.0, &params)?;
        let op = assemble(&grid, &coupling, &params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            (0..op.dimension())
                .map(|_| rng.random_range(0.01..1.0))
                .collect()
        };
        let a = solve_null_vector_from(&op, draw(), DEFAULT_TOL, 500)?;
        let b = solve_null_vector_from(&op, draw(), DEFAULT_TOL, 500)?;
        let d = a.density.l1_distance(&b.density)?;
        let mut r = CriterionReport::new(4, name);
        r.require("l1_distance", d, d <= 10.0 * DEFAULT_TOL)
            .record("solver_tol", DEFAULT_TOL);
        Ok(r)
    };
    attempt().unwrap_or_else(|e| CriterionReport::failed(4, name, &e))
}

/// Map scans for the two coupling regimes on the default ladder.
pub struct RegimeScans {
    pub grid: Grid,
    pub weak: PsiScan,
    pub strong: PsiScan,
    pub weak_params: ModelParams,
    pub strong_params: ModelParams,
    pub elapsed: Duration,
}

impl RegimeScans {
    pub fn compute() -> Result<Self> {
        let start = Instant::now();
        let weak_params = ModelParams::default().with_coupling(0.2);
        let strong_params = ModelParams::default().with_coupling(0.4);
        let grid = build_grid(64, 192, 24.0, &weak_params)?;
        let xs = default_ladder();
        let weak = scan_psi(&xs, &weak_params, &grid, 1.0, DEFAULT_TOL)?;
        let strong = scan_psi(&xs, &strong_params, &grid, 1.0, DEFAULT_TOL)?;
        Ok(Self {
            grid,
            weak,
            strong,
            weak_params,
            strong_params,
            elapsed: start.elapsed(),
        })
    }
}

pub fn fixed_point_regimes(s: &RegimeScans) -> CriterionReport {
    let name = "fixed-point-regimes";
    let attempt = || -> Result<CriterionReport> {
        let start = Instant::now();
        let mut r = CriterionReport::new(5, name);
        let weak_regime = classify_regime(&s.weak_params, 1.0);
        let strong_regime = classify_regime(&s.strong_params, 1.0);
        r.require(
            "weak_regime_flag",
            f64::from(u8::from(weak_regime.weak_exists)),
            weak_regime.weak_exists,
        )
        .require(
            "strong_regime_flag",
            f64::from(u8::from(strong_regime.strong_no_steady)),
            strong_regime.strong_no_steady,
        );
        let weak0 = s.weak.samples.first().map_or(f64::NAN, |x| x.psi);
        let strong0 = s.strong.samples.first().map_or(f64::NAN, |x| x.psi);
        r.require("weak_psi0", weak0, weak0 > 0.0)
            .require("strong_psi0", strong0, strong0 > 0.0)
            .require(
                "weak_scan_failures",
                s.weak.failures.len() as f64,
                s.weak.failures.is_empty(),
            )
            .require(
                "strong_scan_failures",
                s.strong.failures.len() as f64,
                s.strong.failures.is_empty(),
            );
        let changes = s.weak.sign_changes.len() as f64;
        r.require("weak_sign_changes", changes, changes >= 1.0);
        if let Some(&(lo, hi)) = s.weak.sign_changes.first() {
            let fp = find_fixed_point((lo, hi), &s.weak_params, &s.grid, 1.0, 1e-3, DEFAULT_TOL)?;
            r.record("fixed_point", fp.rate).require(
                "fixed_point_defect",
                fp.defect.abs(),
                fp.defect.abs() <= 1e-3,
            );
        }
        let min_gap = s
            .strong
            .samples
            .iter()
            .map(|x| x.psi - x.x)
            .fold(f64::INFINITY, f64::min);
        r.require("strong_min_psi_minus_x", min_gap, min_gap > 0.0);
        let total = s.elapsed + start.elapsed();
        r.require("runtime_s", secs(total), total.as_secs_f64() <= 600.0);
        Ok(r)
    };
    attempt().unwrap_or_else(|e| CriterionReport::failed(5, name, &e))
}

pub fn psi_bracket_check(s: &RegimeScans) -> CriterionReport {
    let mut r = CriterionReport::new(6, "psi-bracket");
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut inside = true;
    for (scan, params) in [(&s.weak, &s.weak_params), (&s.strong, &s.strong_params)] {
        for x in &scan.samples {
            count += 1;
            inside &= x.within_bracket(params.v_f, 0.05);
            let y = params.v_f * x.psi;
            let below = (x.lower - y) / x.lower.abs().max(f64::MIN_POSITIVE);
            let above = (y - x.upper) / x.upper.abs();
            worst = worst.max(below).max(above);
        }
    }
    r.require("samples", count as f64, count == 20)
        .require("worst_relative_excess", worst, inside);
    r
}

/// Stationarity from the steady state and mass over many nonlinear steps.
pub fn conservation_and_stationarity() -> CriterionReport {
    let name = "conservation-stationarity";
    let attempt = || -> Result<CriterionReport> {
        let mut r = CriterionReport::new(7, name);
        let params = ModelParams::default().with_coupling(0.2);
        let grid = build_grid(64, 128, 8.0, &params)?;
        let mut state =
            EvolutionState::new(default_initial(&grid, &params, 1.0)?, 0.0, 1.0, &params)?;
        for _ in 0..10_000 {
            let dt = cfl_dt(&grid, &state.coupling, &params, 0.9, 1e-2);
            step(&mut state, dt, 1.0, &params, DriftScheme::ExponentialFit)?;
        }
        let mass_err = (state.field.mass() - 1.0).abs();
        r.require("mass_error_1e4_steps", mass_err, mass_err <= 1e-10);

        let params = linear_params();
        let coupling = linear_coupling(&params);
        let grid = build_grid(128, 256, 8.0, &params)?;
        let steady = solve_steady(&grid, &coupling, &params, DEFAULT_TOL, 500)?.density;
        let mut state = EvolutionState::new(steady.clone(), 0.0, 1.0, &params)?;
        let mut drift: f64 = 0.0;
        while state.t < 5.0 {
            let dt = cfl_dt(&grid, &state.coupling, &params, 0.9, 1e-2).min(5.0 - state.t);
            step(&mut state, dt, 1.0, &params, DriftScheme::ExponentialFit)?;
            drift = drift.max(state.field.l1_distance(&steady)?);
        }
        r.require("max_l1_drift", drift, drift <= 0.01);
        Ok(r)
    };
    attempt().unwrap_or_else(|e| CriterionReport::failed(7, name, &e))
}

/// Linear run from a displaced Gaussian, sampled finely; feeds the decay,
/// moment, entropy and weighted-norm checks.
pub struct DecayRun {
    pub params: ModelParams,
    pub coarse: RunOutput,
    pub fine: RunOutput,
}

impl DecayRun {
    pub const T: f64 = 5.0;
    pub const SAMPLE_DT: f64 = 0.002;

    pub fn compute() -> Result<Self> {
        let params = linear_params();
        let go = |nv: usize| -> Result<RunOutput> {
            let grid = build_grid(nv, 2 * nv, 8.0, &params)?;
            let init = gaussian_initial(&grid, 3.0, 0.5)?;
            let opts = RunOptions {
                t_end: Self::T,
                sample_dt: Self::SAMPLE_DT,
                ..RunOptions::default()
            };
            run(init, &params, &opts)
        };
        Ok(Self {
            params,
            coarse: go(64)?,
            fine: go(128)?,
        })
    }
}

pub fn linear_decay(d: &DecayRun) -> CriterionReport {
    let name = "linear-decay";
    let s = &d.coarse.series;
    match fit_rate_default(&s.times(), &s.column(|x| x.chi2)) {
        Ok(fit) => {
            let mut r = CriterionReport::new(8, name);
            let limit = 0.1 * fit.rate.abs();
            r.require("eta", -fit.rate, fit.rate < 0.0)
                .require("rms_residual", fit.rms_residual, fit.rms_residual <= limit)
                .record("residual_limit", limit)
                .record("window_start", fit.window.0)
                .record("window_end", fit.window.1);
            r
        }
        Err(e) => CriterionReport::failed(8, name, &e),
    }
}

pub fn moment_relations(d: &DecayRun, weak: &WeakRun) -> CriterionReport {
    let name = "moment-relations";
    let attempt = || -> Result<CriterionReport> {
        let mut r = CriterionReport::new(9, name);
        let coarse = moment_residuals(&d.coarse.series, &d.params)?;
        let fine = moment_residuals(&d.fine.series, &d.params)?;
        let nonlinear = moment_residuals(&weak.output.series, &weak.params)?;
        r.require("h1", coarse.h1, coarse.h1 <= 0.1)
            .require("h2", coarse.h2, coarse.h2 <= 0.1)
            .require("h3", coarse.h3, coarse.h3 <= 0.1)
            .require("psi", coarse.psi, coarse.psi <= 0.1)
            .require("refined_max", fine.max(), fine.max() < coarse.max())
            .require("nonlinear_max", nonlinear.max(), nonlinear.max() <= 0.1);
        Ok(r)
    };
    attempt().unwrap_or_else(|e| CriterionReport::failed(9, name, &e))
}

/// Weakly coupled run used for boundedness and the nonlinear moment check.
pub struct WeakRun {
    pub params: ModelParams,
    pub output: RunOutput,
}

impl WeakRun {
    pub const COUPLING: f64 = 0.1;
    pub const T: f64 = 10.0;

    pub fn compute() -> Result<Self> {
        let params = ModelParams::default().with_coupling(Self::COUPLING);
        let grid = build_grid(64, 192, 12.0, &params)?;
        let opts = RunOptions {
            t_end: Self::T,
            sample_dt: DecayRun::SAMPLE_DT,
            ..RunOptions::default()
        };
        let output = run(default_initial(&grid, &params, 1.0)?, &params, &opts)?;
        Ok(Self { params, output })
    }
}

pub fn weak_boundedness(w: &WeakRun) -> CriterionReport {
    let name = "weak-boundedness";
    let s = &w.output.series;
    let t = s.times();
    let h1 = s.column(|x| x.moments.h[1]);
    let max_to_5 = t
        .iter()
        .zip(&h1)
        .filter(|(t, _)| **t <= 5.0 + 1e-9)
        .map(|(_, h)| *h)
        .fold(f64::NEG_INFINITY, f64::max);
    let sup = h1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match fit_power_law(&t, &s.column(|x| x.cumulative_rate), (2.0, WeakRun::T)) {
        Ok(fit) => {
            let mut r = CriterionReport::new(10, name);
            let omega = classify_regime(&w.params, 1.0).omega_e;
            r.require("omega_e", omega, omega < 0.0)
                .require("sup_over_max_at_5", sup / max_to_5, sup <= 1.1 * max_to_5)
                .require("cumulative_rate_exponent", fit.rate, fit.rate < 1.2);
            r
        }
        Err(e) => CriterionReport::failed(10, name, &e),
    }
}

pub fn strong_growth() -> CriterionReport {
    let name = "strong-growth";
    let attempt = || -> Result<CriterionReport> {
        let params = ModelParams::default().with_coupling(0.4);
        let grid = build_grid(48, 192, 48.0, &params)?;
        let opts = RunOptions {
            t_end: 4.0,
            sample_dt: 0.02,
            ..RunOptions::default()
        };
        let out = run(gaussian_initial(&grid, 5.0, 0.5)?, &params, &opts)?;
        let s = &out.series;
        let fit = fit_rate_default(&s.times(), &s.column(|x| x.moments.h[1]))?;
        let zeta = classify_regime(&params, 1.0).zeta;
        let mut r = CriterionReport::new(11, name);
        r.require("zeta", zeta, zeta > 0.0)
            .require("growth_rate", fit.rate, fit.rate >= 0.85 * zeta)
            .record("threshold", 0.85 * zeta)
            .record("h1_initial", s.samples[0].moments.h[1]);
        Ok(r)
    };
    attempt().unwrap_or_else(|e| CriterionReport::failed(11, name, &e))
}

/// Trapezoidal time integral over the samples.
fn integrate(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

pub fn entropy_monitors(d: &DecayRun) -> CriterionReport {
    let mut r = CriterionReport::new(12, "entropy-monitors");
    let s = &d.coarse.series;
    let t = s.times();
    let abs_log = s.column(|x| x.entropy.abs_log);
    let flux = s.column(|x| x.entropy.boundary_flux);
    let fisher = s.column(|x| x.entropy.fisher);
    let sup = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_flux = flux.iter().copied().fold(f64::INFINITY, f64::min);
    let fisher_integral = integrate(&t, &fisher);
    r.require(
        "sup_abs_log_entropy",
        sup(&abs_log),
        abs_log.iter().all(|x| x.is_finite()),
    )
    .require("min_boundary_flux", min_flux, min_flux >= 0.0)
    .require(
        "sup_fisher",
        sup(&fisher),
        fisher.iter().all(|x| x.is_finite()),
    )
    .require(
        "fisher_time_integral",
        fisher_integral,
        fisher_integral.is_finite(),
    );
    r
}

pub fn lq_monitors(d: &DecayRun) -> CriterionReport {
    let mut r = CriterionReport::new(13, "lq-monitors");
    let s = &d.coarse.series;
    let lq = s.column(|x| x.lq);
    let sup = lq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rate_sq = s.samples.last().map_or(f64::NAN, |x| x.cumulative_rate_sq);
    r.require("sup_weighted_l2", sup, lq.iter().all(|x| x.is_finite()))
        .require("rate_squared_integral", rate_sq, rate_sq.is_finite());
    r
}

pub fn particle_agreement(seed: u64, n: usize) -> CriterionReport {
    let name = "particle-agreement";
    let attempt = || -> Result<CriterionReport> {
        let start = Instant::now();
        let params = linear_params();
        let coupling = linear_coupling(&params);
        let grid = build_grid(128, 256, 8.0, &params)?;
        let pde_rate = firing_profile(
            &solve_steady(&grid, &coupling, &params, DEFAULT_TOL, 500)?.density,
            &params,
        )
        .total;
        let oracle = |dt_divisor: f64| -> Result<(f64, f64)> {
            let mut opts = OracleOptions::new(n, 20.0, seed);
            opts.dt /= dt_divisor;
            let ens =
                ParticleEnsemble::sample_initial(n, coupling.g_in, coupling.a, &params, seed)?;
            let out = simulate(ens, &params, CouplingMode::Frozen(coupling), &opts, &grid)?;
            let mut g = out.ensemble.conductances();
            let ks = ks_distance(&mut g, truncated_maxwellian_cdf(&coupling, f64::INFINITY));
            Ok((out.steady_rate, ks))
        };
        let (rate, ks) = oracle(1.0)?;
        let elapsed = start.elapsed();
        let (rate_half, _) = oracle(2.0)?;
        let mut r = CriterionReport::new(14, name);
        let rel = (rate - pde_rate).abs() / pde_rate;
        let dt_change = (rate - rate_half).abs() / rate_half;
        r.require("ks_distance", ks, ks <= 0.01)
            .record("pde_rate", pde_rate)
            .record("particle_rate", rate)
            .require("relative_rate_error", rel, rel <= 0.05)
            .require("half_step_rate_change", dt_change, dt_change <= 0.05)
            .require("runtime_s", secs(elapsed), elapsed.as_secs_f64() <= 300.0);
        Ok(r)
    };
    attempt().unwrap_or_else(|e| CriterionReport::failed(14, name, &e))
}

/// All fourteen reports in order.
pub fn run_all(seed: u64) -> Vec<CriterionReport> {
    let mut out = Vec::with_capacity(14);
    match LinearSteady::compute() {
        Ok(s) => {
            out.push(maxwellian_marginal(&s));
            out.push(flux_constancy(&s));
            out.push(normalization_bounds(&s));
        }
        Err(e) => {
            for (id, name) in [
                (1, "maxwellian-marginal"),
                (2, "flux-constancy"),
                (3, "normalization-bounds"),
            ] {
                out.push(CriterionReport::failed(id, name, &e));
            }
        }
    }
    out.push(uniqueness(seed));
    match RegimeScans::compute() {
        Ok(s) => {
            out.push(fixed_point_regimes(&s));
            out.push(psi_bracket_check(&s));
        }
        Err(e) => {
            out.push(CriterionReport::failed(5, "fixed-point-regimes", &e));
            out.push(CriterionReport::failed(6, "psi-bracket", &e));
        }
    }
    out.push(conservation_and_stationarity());
    let decay = DecayRun::compute();
    let weak = WeakRun::compute();
    match (&decay, &weak) {
        (Ok(d), Ok(w)) => {
            out.push(linear_decay(d));
            out.push(moment_relations(d, w));
            out.push(weak_boundedness(w));
        }
        _ => {
            let msg = decay
                .as_ref()
                .err()
                .map(|e| e.to_string())
                .or_else(|| weak.as_ref().err().map(|e| e.to_string()))
                .unwrap_or_default();
            for (id, name) in [
                (8, "linear-decay"),
                (9, "moment-relations"),
                (10, "weak-boundedness"),
            ] {
                out.push(CriterionReport::failed(id, name, &msg));
            }
        }
    }
    out.push(strong_growth());
    match &decay {
        Ok(d) => {
            out.push(entropy_monitors(d));
            out.push(lq_monitors(d));
        }
        Err(e) => {
            out.push(CriterionReport::failed(12, "entropy-monitors", e));
            out.push(CriterionReport::failed(13, "lq-monitors", e));
        }
    }
    out.push(particle_agreement(seed, 100_000));
    out.sort_by_key(|r| r.id);
    out
}

/// `key: value` report, one block per criterion, then the overall verdict.
pub fn write_report<W: Write>(reports: &[CriterionReport], mut out: W) -> Result<()> {
    for r in reports {
        writeln!(out, "criterion_{:02}: {}", r.id, r.name)?;
        writeln!(
            out,
            "criterion_{:02}.status: {}",
            r.id,
            if r.passed { "PASS" } else { "FAIL" }
        )?;
        for (k, v) in &r.values {
            writeln!(out, "criterion_{:02}.{k}: {v:.9e}", r.id)?;
        }
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    writeln!(out, "passed: {passed}/{}", reports.len())?;
    writeln!(
        out,
        "status: {}",
        if passed == reports.len() {
            "PASS"
        } else {
            "FAIL"
        }
    )?;
    Ok(())
}

/// Helper for callers that want a density snapshot of the linear steady state.
pub fn linear_steady_density(nv: usize, ng: usize) -> Result<DensityField> {
    let params = linear_params();
    let grid = build_grid(nv, ng, 8.0, &params)?;
    Ok(solve_steady(&grid, &linear_coupling(&params), &params, DEFAULT_TOL, 500)?.density)
}
