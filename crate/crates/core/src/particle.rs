//! Monte Carlo oracle: Euler–Maruyama simulation of the single-neuron
//! dynamics whose law solves the kinetic equation.
//!
//! Particles are split into a fixed number of partitions, each with its own
//! ChaCha stream derived from the seed, so results do not depend on the
//! thread count.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diagnostics::{chi2_distance, entropy_functionals, lq_monitor, moments};
use crate::error::{invalid, Error, Result};
use crate::evolution::{Sample, TimeSeries};
use crate::grid::{DensityField, Grid};
use crate::model::{coupling_from_rate, flux_v, CouplingState, ModelParams, V_RESET};
use crate::steady::marginal_g;

/// Number of independent random streams.
pub const PARTITIONS: usize = 64;
/// Mean-field rate window, in steps.
pub const RATE_WINDOW_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingMode {
    Frozen(CouplingState),
    /// Coupling rebuilt each step from the windowed empirical spike rate.
    MeanField {
        nu: f64,
    },
}

struct Partition {
    v: Vec<f64>,
    g: Vec<f64>,
    rng: ChaCha8Rng,
}

pub struct ParticleEnsemble {
    parts: Vec<Partition>,
    pub t: f64,
    pub spikes: u64,
}

impl ParticleEnsemble {
    fn empty(n: usize, seed: u64) -> Self {
        let parts = (0..PARTITIONS)
            .map(|k| {
                let size = n / PARTITIONS + usize::from(k < n % PARTITIONS);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                Partition {
                    v: Vec::with_capacity(size),
                    g: Vec::with_capacity(size),
                    rng,
                }
            })
            .collect();
        Self {
            parts,
            t: 0.0,
            spikes: 0,
        }
    }

    /// `n` particles with `v` from a normal bump at `V_F/2` (width `V_F/10`,
    /// resampled into `[0, V_F]`) and `g` from a normal law reflected at 0.
    pub fn sample_initial(
        n: usize,
        g_center: f64,
        g_var: f64,
        params: &ModelParams,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one particle"));
        }
        if !(g_var > 0.0) {
            return Err(invalid("g_var", "must be positive"));
        }
        let mut ens = Self::empty(n, seed);
        let sd = g_var.sqrt();
        let v_f = params.v_f;
        ens.parts.par_iter_mut().enumerate().for_each(|(k, p)| {
            let size = n / PARTITIONS + usize::from(k < n % PARTITIONS);
            for _ in 0..size {
                let v = loop {
                    let z: f64 = p.rng.sample(StandardNormal);
                    let v = v_f * (0.5 + 0.1 * z);
                    if (0.0..=v_f).contains(&v) {
                        break v;
                    }
                };
                let z: f64 = p.rng.sample(StandardNormal);
                p.v.push(v);
                p.g.push((g_center + sd * z).abs());
            }
        });
        Ok(ens)
    }

    /// Explicit positions, distributed over partitions in order.
    pub fn from_points(v: &[f64], g: &[f64], params: &ModelParams, seed: u64) -> Result<Self> {
        if v.len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                actual: g.len(),
            });
        }
        if v.is_empty() {
            return Err(invalid("n", "need at least one particle"));
        }
        if v.iter().any(|v| !(0.0..=params.v_f).contains(v)) || g.iter().any(|g| !(*g >= 0.0)) {
            return Err(invalid("points", "need 0 <= v <= V_F and g >= 0"));
        }
        let n = v.len();
        let mut ens = Self::empty(n, seed);
        let mut start = 0;
        for (k, p) in ens.parts.iter_mut().enumerate() {
            let size = n / PARTITIONS + usize::from(k < n % PARTITIONS);
            p.v.extend_from_slice(&v[start..start + size]);
            p.g.extend_from_slice(&g[start..start + size]);
            start += size;
        }
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.parts
            .iter()
            .flat_map(|p| p.v.iter().copied())
            .collect()
    }

    pub fn conductances(&self) -> Vec<f64> {
        self.parts
            .iter()
            .flat_map(|p| p.g.iter().copied())
            .collect()
    }

    /// One Euler–Maruyama step under a fixed coupling; returns the spike count.
    pub fn advance(
        &mut self,
        dt: f64,
        coupling: &CouplingState,
        params: &ModelParams,
    ) -> Result<u64> {
        let noise = (2.0 * coupling.a * dt / params.sigma_e).sqrt();
        let relax = dt / params.sigma_e;
        let g_in = coupling.g_in;
        let spikes: u64 = self
            .parts
            .par_iter_mut()
            .map(|p| {
                let mut count = 0;
                for (v, g) in p.v.iter_mut().zip(p.g.iter_mut()) {
                    let z: f64 = p.rng.sample(StandardNormal);
                    let mut nv = (*v + dt * flux_v(*v, *g, params)).max(0.0);
                    if nv >= params.v_f {
                        nv = V_RESET;
                        count += 1;
                    }
                    *v = nv;
                    *g = (*g + relax * (g_in - *g) + noise * z).abs();
                }
                count
            })
            .sum();
        if self
            .parts
            .iter()
            .any(|p| p.g.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "particle conductance at t = {}",
                self.t
            )));
        }
        self.t += dt;
        self.spikes += spikes;
        Ok(spikes)
    }

    /// Cell counts on `grid`; particles beyond `g_max` are dropped and counted.
    pub fn histogram(&self, grid: &Grid) -> (Vec<u64>, u64) {
        let mut counts = vec![0u64; grid.len()];
        let mut outside = 0;
        for p in &self.parts {
            for (v, g) in p.v.iter().zip(&p.g) {
                let i = ((v / grid.h_v()) as usize).min(grid.nv() - 1);
                let j = (g / grid.h_g()) as usize;
                if j < grid.ng() {
                    counts[grid.index(i, j)] += 1;
                } else {
                    outside += 1;
                }
            }
        }
        (counts, outside)
    }

    /// Histogram normalised to a density on `grid`.
    pub fn density(&self, grid: &Grid) -> Result<DensityField> {
        let (counts, _) = self.histogram(grid);
        let scale = 1.0 / (self.len() as f64 * grid.cell_area());
        DensityField::from_values(*grid, counts.iter().map(|c| *c as f64 * scale).collect())
    }
}

pub fn write_histogram_csv<W: Write>(counts: &[u64], grid: &Grid, mut out: W) -> Result<()> {
    writeln!(out, "v,g,count")?;
    for i in 0..grid.nv() {
        for j in 0..grid.ng() {
            writeln!(
                out,
                "{:.16e},{:.16e},{}",
                grid.v_center(i),
                grid.g_center(j),
                counts[grid.index(i, j)]
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub sample_dt: f64,
    /// Spikes before this time are excluded from the steady rate.
    pub burn_in: f64,
}

impl OracleOptions {
    /// `dt = T / 10⁴`.
    pub fn new(n: usize, t_end: f64, seed: u64) -> Self {
        Self {
            n,
            t_end,
            dt: t_end / 1e4,
            seed,
            sample_dt: t_end / 100.0,
            burn_in: 0.25 * t_end,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "need at least one particle"));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.sample_dt > 0.0) {
            return Err(invalid(
                "dt",
                "time step, horizon and sampling interval must be positive",
            ));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_end) {
            return Err(invalid("burn_in", "must lie in [0, T)"));
        }
        Ok(())
    }
}

pub struct OracleRun {
    pub ensemble: ParticleEnsemble,
    /// Histogram-based monitors with exact particle moments.
    pub series: TimeSeries,
    /// Spikes per particle per unit time after burn-in.
    pub steady_rate: f64,
}

/// Runs the ensemble from `ensemble.t` to `opts.t_end`.
pub fn simulate(
    mut ensemble: ParticleEnsemble,
    params: &ModelParams,
    mode: CouplingMode,
    opts: &OracleOptions,
    grid: &Grid,
) -> Result<OracleRun> {
    opts.validate()?;
    let n = ensemble.len() as f64;
    let steps = ((opts.t_end - ensemble.t) / opts.dt).round().max(0.0) as usize;
    let sample_every = ((opts.sample_dt / opts.dt).round() as usize).max(1);
    let mut window: VecDeque<u64> = VecDeque::with_capacity(RATE_WINDOW_STEPS);
    let mut series = TimeSeries::default();
    let mut steady_spikes = 0u64;
    let mut steady_time = 0.0;
    let windowed_rate = |w: &VecDeque<u64>| {
        if w.is_empty() {
            0.0
        } else {
            w.iter().sum::<u64>() as f64 / (n * w.len() as f64 * opts.dt)
        }
    };
    for k in 0..=steps {
        let rate = windowed_rate(&window);
        let coupling = match mode {
            CouplingMode::Frozen(c) => c,
            CouplingMode::MeanField { nu } => coupling_from_rate(rate, nu, params)?,
        };
        if k % sample_every == 0 || k == steps {
            series
                .samples
                .push(empirical_sample(&ensemble, grid, params, &coupling, rate)?);
        }
        if k == steps {
            break;
        }
        let counted = ensemble.t >= opts.burn_in;
        let spikes = ensemble.advance(opts.dt, &coupling, params)?;
        if counted {
            steady_spikes += spikes;
            steady_time += opts.dt;
        }
        if window.len() == RATE_WINDOW_STEPS {
            window.pop_front();
        }
        window.push_back(spikes);
    }
    let steady_rate = if steady_time > 0.0 {
        steady_spikes as f64 / (n * steady_time)
    } else {
        0.0
    };
    Ok(OracleRun {
        ensemble,
        series,
        steady_rate,
    })
}

fn empirical_sample(
    ens: &ParticleEnsemble,
    grid: &Grid,
    params: &ModelParams,
    coupling: &CouplingState,
    rate: f64,
) -> Result<Sample> {
    let field = ens.density(grid)?;
    let mut m = moments(&field, 4)?;
    // exact particle averages instead of binned ones
    let n = ens.len() as f64;
    m.h.iter_mut().for_each(|h| *h = 0.0);
    let (mut psi, mut cross) = (0.0, 0.0);
    for p in &ens.parts {
        for (v, g) in p.v.iter().zip(&p.g) {
            let mut gk = 1.0;
            for h in m.h.iter_mut() {
                *h += gk;
                gk *= g;
            }
            psi += v;
            cross += g * v;
        }
    }
    m.h.iter_mut().for_each(|h| *h /= n);
    m.psi = psi / n;
    m.cross = cross / n;
    Ok(Sample {
        t: ens.t,
        mass: field.mass(),
        firing_rate: rate,
        g_in: coupling.g_in,
        a: coupling.a,
        moments: m,
        entropy: entropy_functionals(&field, coupling, params),
        lq: lq_monitor(&field, 2.0, 2.0),
        chi2: chi2_distance(&marginal_g(&field), coupling, grid),
        cumulative_rate: ens.spikes as f64 / n,
        cumulative_rate_sq: f64::NAN,
    })
}
