//! Model parameters, transport fluxes, and the firing-rate coupling.
//!
//! The voltage `v` lives on `(0, V_F)` with reset at `V_R = 0`; the
//! conductance `g` lives on `(0, ∞)`. Every other module reads its physical
//! constants from [`ModelParams`].

use crate::error::{invalid, Result};

/// Physical constants of the excitatory integrate-and-fire population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Leak conductance `g_L > 0`.
    pub g_l: f64,
    /// Excitatory reversal potential `V_E > V_F`.
    pub v_e: f64,
    /// Firing threshold `V_F > 0`.
    pub v_f: f64,
    /// Conductance decay time `σ_E > 0`.
    pub sigma_e: f64,
    /// Network coupling strength `S_E ≥ 0`.
    pub s_e: f64,
    /// External-input synaptic strength `f_E > 0`.
    pub f_e: f64,
    /// Coupling normalisation `N_E > 0`.
    pub n_e: f64,
    /// Lower bound on the external rate.
    pub nu_min: f64,
    /// Upper bound on the external rate.
    pub nu_max: f64,
}

/// Reset potential. Fixed at the origin of the voltage axis.
pub const V_RESET: f64 = 0.0;

impl Default for ModelParams {
    /// Desk-scale parameter set: `g_F = 1/3`, linear (`S_E = 0`).
    fn default() -> Self {
        Self {
            g_l: 1.0,
            v_e: 4.0,
            v_f: 1.0,
            sigma_e: 1.0,
            s_e: 0.0,
            f_e: 1.0,
            n_e: 1.0,
            nu_min: 0.1,
            nu_max: 10.0,
        }
    }
}

impl ModelParams {
    /// Checks every structural constraint; returns the parameters unchanged on success.
    pub fn validated(self) -> Result<Self> {
        let finite = [
            ("g_L", self.g_l),
            ("V_E", self.v_e),
            ("V_F", self.v_f),
            ("sigma_E", self.sigma_e),
            ("S_E", self.s_e),
            ("f_E", self.f_e),
            ("N_E", self.n_e),
            ("nu_m", self.nu_min),
            ("nu_M", self.nu_max),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(invalid(name, format!("must be finite, got {value}")));
            }
        }
        if self.g_l <= 0.0 {
            return Err(invalid("g_L", format!("must be > 0, got {}", self.g_l)));
        }
        if self.v_f <= V_RESET {
            return Err(invalid(
                "V_F",
                format!("require 0 = V_R < V_F, got V_F = {}", self.v_f),
            ));
        }
        if self.v_e <= self.v_f {
            return Err(invalid(
                "V_E",
                format!(
                    "require V_F < V_E, got V_F = {} and V_E = {}",
                    self.v_f, self.v_e
                ),
            ));
        }
        if self.sigma_e <= 0.0 {
            return Err(invalid(
                "sigma_E",
                format!("must be > 0, got {}", self.sigma_e),
            ));
        }
        if self.s_e < 0.0 {
            return Err(invalid("S_E", format!("must be >= 0, got {}", self.s_e)));
        }
        if self.f_e <= 0.0 {
            return Err(invalid("f_E", format!("must be > 0, got {}", self.f_e)));
        }
        if self.n_e <= 0.0 {
            return Err(invalid("N_E", format!("must be > 0, got {}", self.n_e)));
        }
        if self.nu_min <= 0.0 {
            return Err(invalid("nu_m", format!("must be > 0, got {}", self.nu_min)));
        }
        if self.nu_max < self.nu_min {
            return Err(invalid(
                "nu_M",
                format!(
                    "require nu_m <= nu_M, got {} > {}",
                    self.nu_min, self.nu_max
                ),
            ));
        }
        Ok(self)
    }

    /// Crossover conductance `g_F = g_L V_F / (V_E - V_F)`: the voltage flux
    /// at threshold is outgoing exactly when `g > g_F`.
    pub fn g_f(&self) -> f64 {
        self.g_l * self.v_f / (self.v_e - self.v_f)
    }

    pub fn with_coupling(mut self, s_e: f64) -> Self {
        self.s_e = s_e;
        self
    }
}

/// Voltage flux `J_v(v, g) = -g_L v + g (V_E - v)`.
#[inline]
pub fn flux_v(v: f64, g: f64, params: &ModelParams) -> f64 {
    -params.g_l * v + g * (params.v_e - v)
}

/// Conductance drift `J_g(g) = (g_in - g) / σ_E`.
#[inline]
pub fn flux_g(g: f64, coupling: &CouplingState, params: &ModelParams) -> f64 {
    (coupling.g_in - g) / params.sigma_e
}

/// Drift and noise closing the nonlinearity at one time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingState {
    /// Total firing rate `𝒩 ≥ 0`.
    pub total_rate: f64,
    /// Mean input conductance `g_in = f_E ν + S_E 𝒩`.
    pub g_in: f64,
    /// Noise intensity `a = (f_E² ν + S_E² 𝒩 / N_E) / (2 σ_E)`.
    pub a: f64,
}

impl CouplingState {
    /// A coupling with prescribed drift target and noise, bypassing the rate
    /// closure. Used for frozen-coefficient experiments.
    pub fn frozen(g_in: f64, a: f64) -> Result<Self> {
        if !(g_in.is_finite() && g_in >= 0.0) {
            return Err(invalid(
                "g_in",
                format!("must be finite and >= 0, got {g_in}"),
            ));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(invalid("a", format!("must be finite and > 0, got {a}")));
        }
        Ok(Self {
            total_rate: 0.0,
            g_in,
            a,
        })
    }
}

/// Builds `(g_in, a)` from the network rate and the external rate.
pub fn coupling_from_rate(total_rate: f64, nu: f64, params: &ModelParams) -> Result<CouplingState> {
    if !(total_rate.is_finite() && total_rate >= 0.0) {
        return Err(invalid(
            "total_rate",
            format!("must be finite and >= 0, got {total_rate}"),
        ));
    }
    if !(nu >= params.nu_min && nu <= params.nu_max) {
        return Err(invalid(
            "nu",
            format!(
                "external rate {nu} outside [{}, {}]",
                params.nu_min, params.nu_max
            ),
        ));
    }
    Ok(CouplingState {
        total_rate,
        g_in: params.f_e * nu + params.s_e * total_rate,
        a: (params.f_e * params.f_e * nu + params.s_e * params.s_e / params.n_e * total_rate)
            / (2.0 * params.sigma_e),
    })
}

/// External input rate: a constant, optionally overridden by a
/// piecewise-constant schedule of `(start_time, rate)` breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRate {
    base: f64,
    schedule: Vec<(f64, f64)>,
}

impl InputRate {
    pub fn constant(nu: f64) -> Self {
        Self {
            base: nu,
            schedule: Vec::new(),
        }
    }

    /// Breakpoints must have strictly increasing start times; before the
    /// first breakpoint the base rate applies.
    pub fn piecewise(base: f64, schedule: Vec<(f64, f64)>) -> Result<Self> {
        if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid(
                "nu_schedule",
                "breakpoint times must be strictly increasing",
            ));
        }
        Ok(Self { base, schedule })
    }

    pub fn at(&self, t: f64) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|(start, _)| t >= *start)
            .map_or(self.base, |&(_, nu)| nu)
    }

    /// Checks every value the schedule can take against `[ν_m, ν_M]`.
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        std::iter::once(self.base)
            .chain(self.schedule.iter().map(|&(_, nu)| nu))
            .try_for_each(|nu| {
                if nu >= params.nu_min && nu <= params.nu_max {
                    Ok(())
                } else {
                    Err(invalid(
                        "nu",
                        format!(
                            "external rate {nu} outside [{}, {}]",
                            params.nu_min, params.nu_max
                        ),
                    ))
                }
            })
    }
}

/// Derived thresholds and exponents classifying the coupling regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub g_f: f64,
    /// `λ_E` with `λ_E V_F = S_E/σ_E + S_E²/(2 N_E σ_E)`.
    pub lambda_e: f64,
    /// `ω_E` with `σ_E ω_E = (V_E/V_F)(S_E + S_E²/(2 N_E)) - 1`.
    pub omega_e: f64,
    /// `ζ = (S_E (V_E - V_F)/V_F - 1)/σ_E`.
    pub zeta: f64,
    /// `(V_E/V_F) S_E < 1`: a steady state exists.
    pub weak_exists: bool,
    /// `(V_E - V_F) S_E / V_F > 1` and `(V_E - V_F) f_E ν > V_F²`: no steady state.
    pub strong_no_steady: bool,
    /// `S_E / f_E`, which the kinetic closure assumes small.
    pub coupling_ratio: f64,
}

pub fn classify_regime(params: &ModelParams, nu: f64) -> RegimeReport {
    let ModelParams {
        v_e,
        v_f,
        sigma_e,
        s_e,
        f_e,
        n_e,
        ..
    } = *params;
    let quadratic = s_e + s_e * s_e / (2.0 * n_e);
    RegimeReport {
        g_f: params.g_f(),
        lambda_e: quadratic / (sigma_e * v_f),
        omega_e: ((v_e / v_f) * quadratic - 1.0) / sigma_e,
        zeta: (s_e * (v_e - v_f) / v_f - 1.0) / sigma_e,
        weak_exists: (v_e / v_f) * s_e < 1.0,
        strong_no_steady: (v_e - v_f) / v_f * s_e > 1.0 && (v_e - v_f) * f_e * nu > v_f * v_f,
        coupling_ratio: s_e / f_e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn flux_v_examples() {
        let p = unit();
        assert_eq!(flux_v(0.0, 0.0, &p), 0.0);
        assert!(flux_v(p.v_f, p.g_f(), &p).abs() < 1e-15);
        assert!((flux_v(1.0, 2.0 / 3.0, &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flux_g_examples() {
        let mut p = unit();
        let c = CouplingState::frozen(1.0, 0.5).unwrap();
        assert_eq!(flux_g(1.0, &c, &p), 0.0);
        assert_eq!(flux_g(0.0, &c, &p), 1.0);
        p.sigma_e = 2.0;
        assert_eq!(flux_g(3.0, &c, &p), -1.0);
    }

    #[test]
    fn coupling_examples() {
        let p = unit().with_coupling(0.5);
        let c = coupling_from_rate(0.0, 1.0, &p).unwrap();
        assert_eq!((c.g_in, c.a), (1.0, 0.5));

        let p = unit().with_coupling(1.0);
        let c = coupling_from_rate(2.0, 1.0, &p).unwrap();
        assert_eq!((c.g_in, c.a), (3.0, 1.5));

        let p = unit();
        let c0 = coupling_from_rate(0.0, 1.0, &p).unwrap();
        let c5 = coupling_from_rate(5.0, 1.0, &p).unwrap();
        assert_eq!((c0.g_in, c0.a), (c5.g_in, c5.a));
    }

    #[test]
    fn coupling_rejects_bad_inputs() {
        let p = unit();
        assert!(coupling_from_rate(-1.0, 1.0, &p).is_err());
        assert!(coupling_from_rate(0.0, 100.0, &p).is_err());
        assert!(coupling_from_rate(f64::NAN, 1.0, &p).is_err());
    }

    #[test]
    fn regime_examples() {
        let r = classify_regime(&unit().with_coupling(0.2), 1.0);
        assert!(r.weak_exists && !r.strong_no_steady);

        let r = classify_regime(&unit().with_coupling(0.4), 1.0);
        assert!(r.strong_no_steady && !r.weak_exists);
        assert!((r.zeta - 0.2).abs() < 1e-12);

        let r = classify_regime(&unit(), 1.0);
        assert_eq!(r.omega_e, -1.0);
        assert!((r.g_f - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn validation_names_offending_key() {
        let p = ModelParams {
            v_f: 2.0,
            v_e: 1.0,
            ..unit()
        };
        let msg = p.validated().unwrap_err().to_string();
        assert!(msg.contains("V_E") && msg.contains("V_F"), "{msg}");
        assert!(ModelParams { g_l: 0.0, ..unit() }.validated().is_err());
        assert!(ModelParams {
            nu_min: 2.0,
            nu_max: 1.0,
            ..unit()
        }
        .validated()
        .is_err());
    }

    #[test]
    fn input_schedule_is_piecewise_constant() {
        let nu = InputRate::piecewise(1.0, vec![(2.0, 3.0), (5.0, 0.5)]).unwrap();
        assert_eq!(nu.at(0.0), 1.0);
        assert_eq!(nu.at(2.0), 3.0);
        assert_eq!(nu.at(4.9), 3.0);
        assert_eq!(nu.at(7.0), 0.5);
        assert!(nu.validate(&unit()).is_ok());
        assert!(InputRate::piecewise(1.0, vec![(2.0, 3.0), (1.0, 0.5)]).is_err());
        assert!(InputRate::constant(50.0).validate(&unit()).is_err());
    }

    fn valid_params() -> impl Strategy<Value = ModelParams> {
        (
            0.1f64..5.0,
            0.1f64..3.0,
            1.01f64..6.0,
            0.1f64..4.0,
            0.0f64..2.0,
            0.1f64..3.0,
            0.2f64..5.0,
        )
            .prop_map(|(g_l, v_f, ratio, sigma_e, s_e, f_e, n_e)| ModelParams {
                g_l,
                v_e: v_f * ratio,
                v_f,
                sigma_e,
                s_e,
                f_e,
                n_e,
                nu_min: 0.1,
                nu_max: 10.0,
            })
    }

    proptest! {
        #[test]
        fn threshold_flux_vanishes(p in valid_params()) {
            prop_assert!(flux_v(p.v_f, p.g_f(), &p).abs() <= 1e-12 * (1.0 + p.g_l * p.v_f));
        }

        #[test]
        fn flux_outgoing_above_crossover(p in valid_params(), excess in 1e-3f64..10.0) {
            let g = p.g_f() + excess;
            prop_assert!(flux_v(p.v_f, g, &p) > 0.0);
            prop_assert!(flux_v(0.0, g, &p) > 0.0);
        }

        #[test]
        fn regime_identities(p in valid_params(), nu in 0.1f64..10.0) {
            let r = classify_regime(&p, nu);
            let lhs = r.lambda_e * p.v_f;
            let rhs = p.s_e / p.sigma_e + p.s_e * p.s_e / (2.0 * p.n_e * p.sigma_e);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            let lhs = p.sigma_e * r.omega_e;
            let rhs = p.v_e / p.v_f * (p.s_e + p.s_e * p.s_e / (2.0 * p.n_e)) - 1.0;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            let zeta = (p.s_e * (p.v_e - p.v_f) / p.v_f - 1.0) / p.sigma_e;
            prop_assert!((r.zeta - zeta).abs() <= 1e-12 * (1.0 + zeta.abs()));
            prop_assert!((r.g_f - p.g_l * p.v_f / (p.v_e - p.v_f)).abs() <= 1e-12 * r.g_f);
            prop_assert!(!(r.weak_exists && r.strong_no_steady));
        }

        #[test]
        fn coupling_affine_and_monotone(p in valid_params(), x in 0.0f64..50.0, dx in 1e-3f64..5.0) {
            let p = ModelParams { s_e: p.s_e.max(1e-3), ..p };
            let c0 = coupling_from_rate(0.0, 1.0, &p).unwrap();
            let c1 = coupling_from_rate(x, 1.0, &p).unwrap();
            let c2 = coupling_from_rate(x + dx, 1.0, &p).unwrap();
            prop_assert!(c2.g_in > c1.g_in && c2.a > c1.a);
            prop_assert!((c1.g_in - (c0.g_in + p.s_e * x)).abs() <= 1e-12 * (1.0 + c1.g_in));
            prop_assert!((c1.a - (c0.a + p.s_e * p.s_e * x / (2.0 * p.n_e * p.sigma_e))).abs() <= 1e-12 * (1.0 + c1.a));
        }
    }
}
