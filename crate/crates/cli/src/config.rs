//! Run configuration: one TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vck_core::evolution::{DriftScheme, RunOptions};
use vck_core::model::{InputRate, ModelParams};
use vck_core::particle::OracleOptions;
use vck_core::Error;

/// Every recognised key, with its unit, for the help text.
pub const KEY_HELP: &str = "\
CONFIG KEYS (section.key, unit, default)
  model.g_L        leak conductance, 1/time                     1
  model.V_E        excitatory reversal potential, voltage        4
  model.V_F        firing threshold, voltage (reset is 0)        1
  model.sigma_E    conductance decay time, time                  1
  model.S_E        network coupling strength, conductance        0
  model.f_E        external synaptic strength, conductance       1
  model.N_E        coupling normalisation, neurons               1
  model.nu         external input rate, 1/time                   1
  model.nu_m       lower bound on the input rate, 1/time         0.1
  model.nu_M       upper bound on the input rate, 1/time         10
  grid.I           voltage cells on (0, V_F), count              64
  grid.J           conductance cells on (0, g_max), count        192
  grid.g_max       conductance truncation, conductance           24
  solver.tol       steady eigen-residual tolerance, relative     1e-10
  solver.max_iter  outer inverse-iteration cap, count            500
  solver.rate_tol  fixed-point bisection tolerance, 1/time       1e-3
  solver.rate      frozen network rate for `steady`, 1/time      0
  solver.safety    CFL safety factor in (0, 1], dimensionless    0.9
  solver.dt_max    time-step cap, time                           0.01
  run.T            evolution horizon, time                       5
  run.sample_dt    time-series cadence, time                     0.05
  run.snapshots    density snapshot times, list of times         []
  run.K            highest conductance moment recorded, order    4
  run.q            exponent of the weighted L^q monitor          2
  run.ell          weight exponent of the L^q monitor            2
  run.scheme       conductance drift: exponential-fit | upwind   exponential-fit
  run.g0           initial conductance mean, conductance         input mean
  run.g0_var       initial conductance variance, conductance^2   input variance
  oracle.n         particles, count                              100000
  oracle.T         particle horizon, time                        20
  oracle.dt        Euler-Maruyama step, time                     T/1e4
  oracle.seed      RNG seed, integer                             1
  oracle.mode      frozen | mean-field                           frozen
  output.directory output directory, path                        out
  output.prefix    file-name prefix, text                        \"\"
";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "g_L")]
    pub g_l: f64,
    #[serde(rename = "V_E")]
    pub v_e: f64,
    #[serde(rename = "V_F")]
    pub v_f: f64,
    #[serde(rename = "sigma_E")]
    pub sigma_e: f64,
    #[serde(rename = "S_E")]
    pub s_e: f64,
    #[serde(rename = "f_E")]
    pub f_e: f64,
    #[serde(rename = "N_E")]
    pub n_e: f64,
    pub nu: f64,
    pub nu_m: f64,
    #[serde(rename = "nu_M")]
    pub nu_max: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            g_l: p.g_l,
            v_e: p.v_e,
            v_f: p.v_f,
            sigma_e: p.sigma_e,
            s_e: p.s_e,
            f_e: p.f_e,
            n_e: p.n_e,
            nu: 1.0,
            nu_m: p.nu_min,
            nu_max: p.nu_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "I")]
    pub nv: usize,
    #[serde(rename = "J")]
    pub ng: usize,
    pub g_max: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nv: 64,
            ng: 192,
            g_max: 24.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub rate_tol: f64,
    pub rate: f64,
    pub safety: f64,
    pub dt_max: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            rate_tol: 1e-3,
            rate: 0.0,
            safety: 0.9,
            dt_max: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    ExponentialFit,
    Upwind,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub sample_dt: f64,
    pub snapshots: Vec<f64>,
    #[serde(rename = "K")]
    pub max_moment: usize,
    pub q: f64,
    pub ell: f64,
    pub scheme: SchemeName,
    pub g0: Option<f64>,
    pub g0_var: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            t_end: 5.0,
            sample_dt: 0.05,
            snapshots: Vec::new(),
            max_moment: 4,
            q: 2.0,
            ell: 2.0,
            scheme: SchemeName::ExponentialFit,
            g0: None,
            g0_var: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    Frozen,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: Option<f64>,
    pub seed: u64,
    pub mode: OracleMode,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            n: 100_000,
            t_end: 20.0,
            dt: None,
            seed: 1,
            mode: OracleMode::Frozen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            prefix: String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub run: RunSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

/// A configuration problem, reported with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn in_section(section: &str, err: Error) -> ConfigError {
    match err {
        Error::InvalidParameter { name, reason } => {
            ConfigError(format!("invalid `{section}.{name}`: {reason}"))
        }
        other => ConfigError(format!("invalid [{section}] section: {other}")),
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        ConfigError(format!(
            "override `{spec}` is not of the form section.key=value"
        ))
    })?;
    let (section, key) = path.trim().split_once('.').ok_or_else(|| {
        ConfigError(format!(
            "override key `{path}` is not of the form section.key"
        ))
    })?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| ConfigError(format!("`{section}` is not a section")))?;
    sub.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies overrides, validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("config error: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let params = self.params()?;
        if !(self.model.nu.is_finite() && self.model.nu > 0.0) {
            return Err(ConfigError(format!(
                "invalid `model.nu`: must be > 0, got {}",
                self.model.nu
            )));
        }
        InputRate::constant(self.model.nu)
            .validate(&params)
            .map_err(|e| in_section("model", e))?;
        if self.grid.nv < 4 || self.grid.ng < 4 {
            return Err(ConfigError(
                "invalid `grid.I`/`grid.J`: need at least 4 cells".into(),
            ));
        }
        vck_core::grid::build_grid(self.grid.nv, self.grid.ng, self.grid.g_max, &params)
            .map_err(|e| in_section("grid", e))?;
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol < 1.0) {
            return Err(ConfigError(format!(
                "invalid `solver.tol`: must lie in (0, 1), got {}",
                s.tol
            )));
        }
        if s.max_iter == 0 {
            return Err(ConfigError(
                "invalid `solver.max_iter`: must be positive".into(),
            ));
        }
        if !(s.rate_tol > 0.0) {
            return Err(ConfigError(
                "invalid `solver.rate_tol`: must be positive".into(),
            ));
        }
        if !(s.rate >= 0.0 && s.rate.is_finite()) {
            return Err(ConfigError(format!(
                "invalid `solver.rate`: must be >= 0, got {}",
                s.rate
            )));
        }
        self.run_options().validate(&params).map_err(|e| {
            in_section(
                if matches!(
                    e,
                    Error::InvalidParameter {
                        name: "safety" | "dt_max",
                        ..
                    }
                ) {
                    "solver"
                } else {
                    "run"
                },
                e,
            )
        })?;
        if self
            .run
            .snapshots
            .iter()
            .any(|t| !(*t >= 0.0 && *t <= self.run.t_end))
        {
            return Err(ConfigError(
                "invalid `run.snapshots`: times must lie in [0, run.T]".into(),
            ));
        }
        if let Some(v) = self.run.g0_var {
            if !(v > 0.0) {
                return Err(ConfigError(format!(
                    "invalid `run.g0_var`: must be > 0, got {v}"
                )));
            }
        }
        if let Some(g) = self.run.g0 {
            if !(g >= 0.0 && g < self.grid.g_max) {
                return Err(ConfigError(format!(
                    "invalid `run.g0`: must lie in [0, grid.g_max), got {g}"
                )));
            }
        }
        let o = &self.oracle;
        if o.n == 0 {
            return Err(ConfigError(
                "invalid `oracle.n`: need at least one particle".into(),
            ));
        }
        if !(o.t_end > 0.0 && o.t_end.is_finite()) {
            return Err(ConfigError(format!(
                "invalid `oracle.T`: must be > 0, got {}",
                o.t_end
            )));
        }
        if let Some(dt) = o.dt {
            if !(dt > 0.0 && dt <= o.t_end) {
                return Err(ConfigError(format!(
                    "invalid `oracle.dt`: must lie in (0, oracle.T], got {dt}"
                )));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let m = &self.model;
        ModelParams {
            g_l: m.g_l,
            v_e: m.v_e,
            v_f: m.v_f,
            sigma_e: m.sigma_e,
            s_e: m.s_e,
            f_e: m.f_e,
            n_e: m.n_e,
            nu_min: m.nu_m,
            nu_max: m.nu_max,
        }
        .validated()
        .map_err(|e| in_section("model", e))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            t_end: self.run.t_end,
            safety: self.solver.safety,
            dt_max: self.solver.dt_max,
            sample_dt: self.run.sample_dt,
            snapshot_times: self.run.snapshots.clone(),
            max_moment: self.run.max_moment,
            lq_q: self.run.q,
            lq_ell: self.run.ell,
            scheme: match self.run.scheme {
                SchemeName::ExponentialFit => DriftScheme::ExponentialFit,
                SchemeName::Upwind => DriftScheme::Upwind,
            },
            input: InputRate::constant(self.model.nu),
        }
    }

    pub fn oracle_options(&self) -> OracleOptions {
        let mut o = OracleOptions::new(self.oracle.n, self.oracle.t_end, self.oracle.seed);
        if let Some(dt) = self.oracle.dt {
            o.dt = dt;
        }
        o
    }

    /// `directory/prefix + name`.
    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output
            .directory
            .join(format!("{}{name}", self.output.prefix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(overrides: &[&str]) -> Result<RunConfig, ConfigError> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(None, &o)
    }

    #[test]
    fn defaults_validate() {
        let cfg = load(&[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("default.toml");
        assert_eq!(
            RunConfig::load(Some(&path), &[]).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn overrides_take_typed_values() {
        let cfg = load(&[
            "model.S_E=0.2",
            "grid.I=32",
            "run.scheme=upwind",
            "run.snapshots=[0.5, 1.0]",
        ])
        .unwrap();
        assert_eq!(cfg.model.s_e, 0.2);
        assert_eq!(cfg.grid.nv, 32);
        assert_eq!(cfg.run.scheme, SchemeName::Upwind);
        assert_eq!(cfg.run.snapshots, vec![0.5, 1.0]);
    }

    #[test]
    fn ordering_violation_names_the_key() {
        let err = load(&["model.V_F=2", "model.V_E=1"]).unwrap_err();
        assert!(err.0.contains("model.V_E"), "{err}");
        assert!(err.0.contains("V_F < V_E"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(&["model.v_f=2"]).unwrap_err();
        assert!(err.0.contains("v_f"), "{err}");
        let err = load(&["plot.colour=1"]).unwrap_err();
        assert!(err.0.contains("plot"), "{err}");
    }

    #[test]
    fn malformed_override_is_rejected() {
        assert!(load(&["model.V_F"]).is_err());
        assert!(load(&["V_F=2"]).is_err());
    }

    #[test]
    fn solver_keys_are_attributed_to_solver() {
        let err = load(&["solver.safety=2"]).unwrap_err();
        assert!(err.0.contains("solver.safety"), "{err}");
        let err = load(&["run.K=1"]).unwrap_err();
        assert!(err.0.contains("run.K"), "{err}");
    }

    #[test]
    fn truncated_grid_is_rejected() {
        assert!(load(&["grid.g_max=0"]).is_err());
    }
}
