//! Time integration of the nonlinear equation with firing-rate feedback.
//!
//! Each step freezes the coupling at the start of the step and splits the
//! transport:
//!
//! 1. explicit upwind advection in `v`, with the threshold outflow of every
//!    row above the crossover reinjected into the first cell of that row;
//! 2. implicit conductance relaxation per voltage column.
//!
//! The default conductance substep uses the exponentially fitted flux of the
//! steady operator, so `(I - dt L_v) p = (I + dt L_g) p'` has exactly the
//! discrete steady states as fixed points. The split upwind drift with
//! implicit centred diffusion is kept as an alternative.

use std::io::Write;

use rayon::prelude::*;

use crate::diagnostics::{
    chi2_distance, entropy_functionals, lq_monitor, moments, EntropyFunctionals, Moments,
};
use crate::error::{invalid, Error, Result};
use crate::grid::{DensityField, Grid};
use crate::linalg::TridiagonalLu;
use crate::model::{coupling_from_rate, flux_v, CouplingState, InputRate, ModelParams};
use crate::steady::{firing_profile, gaussian_ratio, marginal_g, FiringProfile, A_MIN};

/// Discretisation of the conductance drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DriftScheme {
    /// Drift and diffusion together through the Maxwellian-fitted flux, implicit.
    #[default]
    ExponentialFit,
    /// Explicit upwind drift followed by implicit centred diffusion.
    Upwind,
}

#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub field: DensityField,
    pub t: f64,
    /// Coupling used by the most recent step, or built from the initial rate.
    pub coupling: CouplingState,
    /// Firing profile at the start of the most recent step.
    pub last_profile: FiringProfile,
}

impl EvolutionState {
    pub fn new(field: DensityField, t: f64, nu: f64, params: &ModelParams) -> Result<Self> {
        let last_profile = firing_profile(&field, params);
        let coupling = coupling_from_rate(last_profile.total, nu, params)?;
        Ok(Self {
            field,
            t,
            coupling,
            last_profile,
        })
    }
}

/// Largest stable step: `safety · min(h_v / max|J_v|, h_g / max|J_g|)`,
/// capped by `dt_max`. Both fluxes are affine, so their maxima sit on the
/// domain corners.
pub fn cfl_dt(
    grid: &Grid,
    coupling: &CouplingState,
    params: &ModelParams,
    safety: f64,
    dt_max: f64,
) -> f64 {
    let jv = [0.0, grid.v_max()]
        .iter()
        .flat_map(|&v| [0.0, grid.g_max()].map(|g| flux_v(v, g, params).abs()))
        .fold(0.0, f64::max);
    let jg = [0.0, grid.g_max()]
        .iter()
        .map(|g| ((coupling.g_in - g) / params.sigma_e).abs())
        .fold(0.0, f64::max);
    let mut dt = dt_max;
    if jv > 0.0 {
        dt = dt.min(safety * grid.h_v() / jv);
    }
    if jg > 0.0 {
        dt = dt.min(safety * grid.h_g() / jg);
    }
    dt
}

/// Mass bookkeeping of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    /// Mass moved from threshold to reset, `dt Σ N_j h_g`.
    pub reinjected: f64,
}

/// Advances `state` by `dt` under external rate `nu`.
pub fn step(
    state: &mut EvolutionState,
    dt: f64,
    nu: f64,
    params: &ModelParams,
    scheme: DriftScheme,
) -> Result<StepReport> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(
            "dt",
            format!("time step must be positive, got {dt}"),
        ));
    }
    let profile = firing_profile(&state.field, params);
    let coupling = coupling_from_rate(profile.total, nu, params)?;
    if coupling.a < A_MIN {
        return Err(invalid(
            "a",
            format!("noise intensity {} below a_min = {A_MIN}", coupling.a),
        ));
    }
    let grid = *state.field.grid();
    let mut next = vec![0.0; grid.len()];
    advect_voltage(state.field.values(), &mut next, &grid, params, dt);
    relax_conductance(&mut next, &grid, &coupling, params, dt, scheme);

    if let Some((k, &value)) = next
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(Error::Unstable {
            t: state.t,
            i: k / grid.ng(),
            j: k % grid.ng(),
            value,
        });
    }
    state.field.values_mut().copy_from_slice(&next);
    state.t += dt;
    state.coupling = coupling;
    let reinjected = dt * profile.total;
    state.last_profile = profile;
    Ok(StepReport { dt, reinjected })
}

/// Explicit upwind update in `v`, reading `p` and writing `out`.
fn advect_voltage(p: &[f64], out: &mut [f64], grid: &Grid, params: &ModelParams, dt: f64) {
    let (nv, ng) = (grid.nv(), grid.ng());
    let ratio = dt / grid.h_v();
    let row = |i: usize| &p[i * ng..(i + 1) * ng];
    // Upwind flux through the right edge of cell i in conductance row j.
    let right_flux = |i: usize, j: usize| -> f64 {
        let g = grid.g_center(j);
        if i + 1 < nv {
            let flux = flux_v(grid.v_edge(i + 1), g, params);
            flux * if flux >= 0.0 {
                row(i)[j]
            } else {
                row(i + 1)[j]
            }
        } else if grid.is_reset_row(j) {
            flux_v(params.v_f, g, params) * row(nv - 1)[j]
        } else {
            0.0
        }
    };
    out.par_chunks_mut(ng).enumerate().for_each(|(i, dst)| {
        for (j, d) in dst.iter_mut().enumerate() {
            // at v = 0 the inflow is the reinjected threshold outflow
            let left = if i == 0 {
                right_flux(nv - 1, j)
            } else {
                right_flux(i - 1, j)
            };
            *d = row(i)[j] - ratio * (right_flux(i, j) - left);
        }
    });
}

/// Conductance substep applied to every voltage column of `p` in place.
pub fn relax_conductance(
    p: &mut [f64],
    grid: &Grid,
    coupling: &CouplingState,
    params: &ModelParams,
    dt: f64,
    scheme: DriftScheme,
) {
    let ng = grid.ng();
    let (lower, diag, upper) = conductance_system(grid, coupling, params, dt, scheme);
    let lu = TridiagonalLu::new(&lower, &diag, &upper);
    match scheme {
        DriftScheme::ExponentialFit => {
            p.par_chunks_mut(ng).for_each(|col| lu.solve_in_place(col));
        }
        DriftScheme::Upwind => {
            let ratio = dt / grid.h_g();
            let edge_flux: Vec<f64> = (1..ng)
                .map(|k| (coupling.g_in - grid.g_edge(k)) / params.sigma_e)
                .collect();
            p.par_chunks_mut(ng).for_each(|col| {
                let old = col.to_vec();
                for (k, &flux) in edge_flux.iter().enumerate() {
                    // edge between cells k and k+1
                    let moved = ratio * flux * if flux >= 0.0 { old[k] } else { old[k + 1] };
                    col[k] -= moved;
                    col[k + 1] += moved;
                }
                lu.solve_in_place(col);
            });
        }
    }
}

/// `(lower, diag, upper)` of `I + dt A`, where `-A` is the conductance
/// generator of the chosen scheme. Columns of `A` sum to zero.
fn conductance_system(
    grid: &Grid,
    coupling: &CouplingState,
    params: &ModelParams,
    dt: f64,
    scheme: DriftScheme,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ng = grid.ng();
    let c = dt * coupling.a / (params.sigma_e * grid.h_g() * grid.h_g());
    let mut lower = vec![0.0; ng];
    let mut diag = vec![1.0; ng];
    let mut upper = vec![0.0; ng];
    let (g_in, a) = (coupling.g_in, coupling.a);
    for k in 1..ng {
        // edge between cells k-1 and k
        let (from_below, from_above) = match scheme {
            // flux = -c [W_e p_k / w_k - W_e p_{k-1} / w_{k-1}]
            DriftScheme::ExponentialFit => (
                c * gaussian_ratio(grid.g_edge(k), grid.g_center(k - 1), g_in, a),
                c * gaussian_ratio(grid.g_edge(k), grid.g_center(k), g_in, a),
            ),
            DriftScheme::Upwind => (c, c),
        };
        diag[k - 1] += from_below;
        upper[k - 1] = -from_above;
        diag[k] += from_above;
        lower[k] = -from_below;
    }
    (lower, diag, upper)
}

/// Smooth product initial density: a Gaussian bump in `v` centred at
/// `V_F/2` with width `V_F/10`, times a Gaussian in `g` with the given
/// centre and variance. Normalised to unit mass.
pub fn gaussian_initial(grid: &Grid, g_center: f64, g_var: f64) -> Result<DensityField> {
    if !(g_var > 0.0 && g_var.is_finite()) {
        return Err(invalid("g_var", format!("must be positive, got {g_var}")));
    }
    let v_f = grid.v_max();
    let v_width = 0.1 * v_f;
    let mut field = DensityField::from_fn(*grid, |v, g| {
        let dv = (v - 0.5 * v_f) / v_width;
        let dg = g - g_center;
        (-0.5 * dv * dv - dg * dg / (2.0 * g_var)).exp()
    });
    field.normalize()?;
    Ok(field)
}

/// [`gaussian_initial`] centred on the input conductance and variance the
/// external drive alone produces.
pub fn default_initial(grid: &Grid, params: &ModelParams, nu: f64) -> Result<DensityField> {
    let c = coupling_from_rate(0.0, nu, params)?;
    gaussian_initial(grid, c.g_in, c.a)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub t_end: f64,
    pub safety: f64,
    pub dt_max: f64,
    /// Sampling interval for the time series.
    pub sample_dt: f64,
    pub snapshot_times: Vec<f64>,
    /// Highest conductance moment recorded.
    pub max_moment: usize,
    pub lq_q: f64,
    pub lq_ell: f64,
    pub scheme: DriftScheme,
    pub input: InputRate,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            t_end: 5.0,
            safety: 0.9,
            dt_max: 1e-2,
            sample_dt: 0.05,
            snapshot_times: Vec::new(),
            max_moment: 4,
            lq_q: 2.0,
            lq_ell: 2.0,
            scheme: DriftScheme::ExponentialFit,
            input: InputRate::constant(1.0),
        }
    }
}

impl RunOptions {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid(
                "T",
                format!("horizon must be positive, got {}", self.t_end),
            ));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(invalid(
                "safety",
                format!("must lie in (0, 1], got {}", self.safety),
            ));
        }
        if !(self.dt_max > 0.0) {
            return Err(invalid("dt_max", "must be positive"));
        }
        if !(self.sample_dt > 0.0) {
            return Err(invalid("sample_dt", "must be positive"));
        }
        if self.max_moment < 2 {
            return Err(invalid("K", "need max moment order >= 2"));
        }
        if !(self.lq_q >= 1.0) {
            return Err(invalid("q", format!("need q >= 1, got {}", self.lq_q)));
        }
        self.input.validate(params)
    }
}

/// Monitored quantities at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    pub firing_rate: f64,
    pub g_in: f64,
    pub a: f64,
    pub moments: Moments,
    pub entropy: EntropyFunctionals,
    pub lq: f64,
    pub chi2: f64,
    /// `∫_0^t 𝒩` as reinjected by the scheme.
    pub cumulative_rate: f64,
    /// `∫_0^t 𝒩²`.
    pub cumulative_rate_sq: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TimeSeries {
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    pub fn times(&self) -> Vec<f64> {
        self.column(|s| s.t)
    }

    pub fn column(&self, f: impl Fn(&Sample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let k_max = self.samples.first().map_or(4, |s| s.moments.h.len() - 1);
        let mut header = String::from("t,mass,N_total,g_in,a,psi");
        for k in 1..=k_max {
            header.push_str(&format!(",h{k}"));
        }
        header.push_str(",f,entropy,lq_monitor,chi2");
        writeln!(out, "{header}")?;
        for s in &self.samples {
            let mut line = format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t, s.mass, s.firing_rate, s.g_in, s.a, s.moments.psi
            );
            for h in &s.moments.h[1..] {
                line.push_str(&format!(",{h:.16e}"));
            }
            line.push_str(&format!(
                ",{:.16e},{:.16e},{:.16e},{:.16e}",
                s.moments.wall_trace, s.entropy.abs_log, s.lq, s.chi2
            ));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// File name for a snapshot at time `t`.
pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t:.6}.csv")
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: TimeSeries,
    pub snapshots: Vec<(f64, DensityField)>,
    pub state: EvolutionState,
    pub steps: usize,
    pub dt_range: (f64, f64),
}

fn sample(
    field: &DensityField,
    t: f64,
    nu: f64,
    params: &ModelParams,
    opts: &RunOptions,
    cumulative: (f64, f64),
) -> Result<Sample> {
    let profile = firing_profile(field, params);
    let coupling = coupling_from_rate(profile.total, nu, params)?;
    Ok(Sample {
        t,
        mass: field.mass(),
        firing_rate: profile.total,
        g_in: coupling.g_in,
        a: coupling.a,
        moments: moments(field, opts.max_moment)?,
        entropy: entropy_functionals(field, &coupling, params),
        lq: lq_monitor(field, opts.lq_q, opts.lq_ell),
        chi2: chi2_distance(&marginal_g(field), &coupling, field.grid()),
        cumulative_rate: cumulative.0,
        cumulative_rate_sq: cumulative.1,
    })
}

/// Integrates from `initial` at `t = 0` to `opts.t_end`, sampling every
/// `opts.sample_dt` and at the end, with steps landing exactly on sample
/// and snapshot times.
pub fn run(initial: DensityField, params: &ModelParams, opts: &RunOptions) -> Result<RunOutput> {
    opts.validate(params)?;
    let mass = initial.mass();
    if !((mass - 1.0).abs() < 1e-8) {
        return Err(invalid(
            "initial",
            format!("density must have unit mass, got {mass}"),
        ));
    }
    if initial.min_value() < 0.0 {
        return Err(invalid("initial", "density must be nonnegative"));
    }
    let grid = *initial.grid();
    let mut state = EvolutionState::new(initial, 0.0, opts.input.at(0.0), params)?;
    let mut snapshot_times: Vec<f64> = opts
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| *t >= 0.0 && *t <= opts.t_end)
        .collect();
    snapshot_times.sort_by(f64::total_cmp);
    let mut snapshots = Vec::new();
    let mut next_snapshot = 0;
    let mut series = TimeSeries::default();
    let (mut cum, mut cum_sq) = (0.0, 0.0);
    let mut next_sample = 0.0;
    let mut steps = 0;
    let (mut dt_lo, mut dt_hi) = (f64::INFINITY, 0.0f64);
    // Events closer than this are treated as reached.
    let eps = 1e-12 * opts.t_end.max(1.0);
    loop {
        let t = state.t;
        let nu = opts.input.at(t);
        if t >= next_sample - eps {
            series
                .samples
                .push(sample(&state.field, t, nu, params, opts, (cum, cum_sq))?);
            next_sample += opts.sample_dt;
        }
        while next_snapshot < snapshot_times.len() && t >= snapshot_times[next_snapshot] - eps {
            snapshots.push((t, state.field.clone()));
            next_snapshot += 1;
        }
        if t >= opts.t_end - eps {
            if series.samples.last().is_none_or(|s| s.t < t - eps) {
                series
                    .samples
                    .push(sample(&state.field, t, nu, params, opts, (cum, cum_sq))?);
            }
            break;
        }
        let rate = firing_profile(&state.field, params).total;
        let coupling = coupling_from_rate(rate, nu, params)?;
        let mut dt = cfl_dt(&grid, &coupling, params, opts.safety, opts.dt_max);
        let mut horizon = next_sample.min(opts.t_end);
        if next_snapshot < snapshot_times.len() {
            horizon = horizon.min(snapshot_times[next_snapshot]);
        }
        if t + dt > horizon - eps {
            dt = horizon - t;
        }
        let report = step(&mut state, dt, nu, params, opts.scheme)?;
        cum += report.reinjected;
        cum_sq += dt * state.last_profile.total * state.last_profile.total;
        dt_lo = dt_lo.min(dt);
        dt_hi = dt_hi.max(dt);
        steps += 1;
    }
    Ok(RunOutput {
        series,
        snapshots,
        state,
        steps,
        dt_range: (dt_lo, dt_hi),
    })
}

/// Worst-case mismatch between central-difference time derivatives of the
/// recorded moments and the right-hand sides of their evolution laws,
/// relative to the largest right-hand side over the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentResiduals {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub psi: f64,
}

impl MomentResiduals {
    pub fn max(&self) -> f64 {
        self.h1.max(self.h2).max(self.h3).max(self.psi)
    }
}

pub fn moment_residuals(series: &TimeSeries, params: &ModelParams) -> Result<MomentResiduals> {
    let s = &series.samples;
    if s.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: s.len(),
        });
    }
    if s[0].moments.h.len() < 4 {
        return Err(invalid("K", "moment residuals need moments up to order 3"));
    }
    let sigma = params.sigma_e;
    let mut err = [0.0f64; 4];
    let mut scale = [0.0f64; 4];
    for k in 1..s.len() - 1 {
        let (prev, x, next) = (&s[k - 1], &s[k], &s[k + 1]);
        let span = next.t - prev.t;
        let d = |f: fn(&Sample) -> f64| (f(next) - f(prev)) / span;
        let h = &x.moments.h;
        let rhs = [
            (-h[1] + x.g_in + x.a * x.moments.wall_trace) / sigma,
            (-2.0 * h[2] + 2.0 * x.g_in * h[1] + 2.0 * x.a * h[0]) / sigma,
            (-3.0 * h[3] + 3.0 * x.g_in * h[2] + 6.0 * x.a * h[1]) / sigma,
            -params.g_l * x.moments.psi - x.moments.cross + params.v_e * h[1]
                - params.v_f * x.firing_rate,
        ];
        let lhs = [
            d(|s| s.moments.h[1]),
            d(|s| s.moments.h[2]),
            d(|s| s.moments.h[3]),
            d(|s| s.moments.psi),
        ];
        for m in 0..4 {
            err[m] = err[m].max((lhs[m] - rhs[m]).abs());
            scale[m] = scale[m].max(rhs[m].abs());
        }
    }
    let rel = |m: usize| {
        if scale[m] > 0.0 {
            err[m] / scale[m]
        } else {
            err[m]
        }
    };
    Ok(MomentResiduals {
        h1: rel(0),
        h2: rel(1),
        h3: rel(2),
        psi: rel(3),
    })
}
