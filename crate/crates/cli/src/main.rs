mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vck_core::diagnostics::maxwellian_cells;
use vck_core::evolution::{default_initial, gaussian_initial, run, snapshot_name};
use vck_core::fixed_point::{
    default_ladder, scan_psi, search_fixed_point, write_scan_csv, FixedPointSearch,
};
use vck_core::grid::{build_grid, DensityField, Grid};
use vck_core::model::{coupling_from_rate, ModelParams};
use vck_core::particle::{simulate, write_histogram_csv, CouplingMode, ParticleEnsemble};
use vck_core::steady::{firing_profile, marginal_g, solve_steady};
use vck_core::verify::{run_all, write_report};
use vck_core::Error;

use config::{ConfigError, OracleMode, RunConfig, KEY_HELP};

#[derive(Parser, Debug)]
#[command(name = "vck", version, about = "Voltage-conductance kinetic solvers for integrate-and-fire networks", after_help = KEY_HELP)]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set model.S_E=0.2`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stationary density at the frozen rate `solver.rate`.
    Steady,
    /// Tabulate the rate map on the default ladder.
    PsiScan,
    /// Locate the self-consistent firing rate and write its density.
    FixedPoint,
    /// Time-dependent run with monitors and snapshots.
    Evolve,
    /// Particle simulation of the underlying stochastic dynamics.
    Oracle,
    /// Run the full acceptance suite and write the report.
    Verify,
}

enum Failure {
    Config(String),
    Solver(String),
    VerifyFailed,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. }
            | Error::InvalidBracket { .. }
            | Error::Unstable { .. }
            | Error::NonFinite(_)
            | Error::InsufficientSamples { .. } => Failure::Solver(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))
}

fn grid_for(cfg: &RunConfig, params: &ModelParams) -> Result<Grid, Failure> {
    Ok(build_grid(
        cfg.grid.nv,
        cfg.grid.ng,
        cfg.grid.g_max,
        params,
    )?)
}

fn write_density(path: &Path, field: &DensityField) -> Outcome {
    let mut out = create(path)?;
    field.write_csv(&mut out)?;
    out.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn steady(cfg: &RunConfig) -> Outcome {
    let params = cfg.params()?;
    let grid = grid_for(cfg, &params)?;
    let coupling = coupling_from_rate(cfg.solver.rate, cfg.model.nu, &params)?;
    let sol = solve_steady(
        &grid,
        &coupling,
        &params,
        cfg.solver.tol,
        cfg.solver.max_iter,
    )?;
    write_density(&cfg.output_path("density.csv"), &sol.density)?;

    let phi = marginal_g(&sol.density);
    let reference = maxwellian_cells(&coupling, &grid);
    let path = cfg.output_path("marginal.csv");
    let mut out = create(&path)?;
    writeln!(out, "g,phi,maxwellian")?;
    for (j, (p, m)) in phi.iter().zip(&reference).enumerate() {
        writeln!(out, "{:.17e},{p:.17e},{m:.17e}", grid.g_center(j))?;
    }
    out.flush()?;
    println!("wrote {}", path.display());

    let firing = firing_profile(&sol.density, &params);
    let path = cfg.output_path("firing.csv");
    let mut out = create(&path)?;
    writeln!(out, "g,N")?;
    for (j, n) in firing.per_cell.iter().enumerate() {
        writeln!(out, "{:.17e},{n:.17e}", grid.g_center(j))?;
    }
    out.flush()?;
    println!("wrote {}", path.display());
    println!("g_in: {:.10e}", coupling.g_in);
    println!("a: {:.10e}", coupling.a);
    println!("N_total: {:.10e}", firing.total);
    println!("mass: {:.15e}", sol.density.mass());
    Ok(())
}

fn psi_scan(cfg: &RunConfig) -> Outcome {
    let params = cfg.params()?;
    let grid = grid_for(cfg, &params)?;
    let scan = scan_psi(
        &default_ladder(),
        &params,
        &grid,
        cfg.model.nu,
        cfg.solver.tol,
    )?;
    let path = cfg.output_path("psi_scan.csv");
    let mut out = create(&path)?;
    write_scan_csv(&scan.samples, &mut out)?;
    out.flush()?;
    println!("wrote {}", path.display());
    for (x, e) in &scan.failures {
        eprintln!("rate {x}: {e}");
    }
    for (lo, hi) in &scan.sign_changes {
        println!("sign_change: [{lo}, {hi}]");
    }
    if scan.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "{} ladder points failed",
            scan.failures.len()
        )))
    }
}

fn fixed_point(cfg: &RunConfig) -> Outcome {
    let params = cfg.params()?;
    let grid = grid_for(cfg, &params)?;
    match search_fixed_point(
        &params,
        &grid,
        cfg.model.nu,
        cfg.solver.rate_tol,
        cfg.solver.tol,
    )? {
        FixedPointSearch::Found(fp) => {
            println!("N_star: {:.10e}", fp.rate);
            println!("defect: {:.3e}", fp.defect);
            println!("evaluations: {}", fp.evaluations);
            let coupling = coupling_from_rate(fp.rate, cfg.model.nu, &params)?;
            let sol = solve_steady(
                &grid,
                &coupling,
                &params,
                cfg.solver.tol,
                cfg.solver.max_iter,
            )?;
            write_density(&cfg.output_path("fixed_point_density.csv"), &sol.density)
        }
        FixedPointSearch::NoneInRange { x_max } => Err(Failure::Solver(format!(
            "no fixed point: Psi(x) - x keeps one sign for rates up to {x_max}"
        ))),
    }
}

fn evolve(cfg: &RunConfig) -> Outcome {
    let params = cfg.params()?;
    let grid = grid_for(cfg, &params)?;
    let start = coupling_from_rate(0.0, cfg.model.nu, &params)?;
    let initial = match (cfg.run.g0, cfg.run.g0_var) {
        (None, None) => default_initial(&grid, &params, cfg.model.nu)?,
        (g0, var) => gaussian_initial(&grid, g0.unwrap_or(start.g_in), var.unwrap_or(start.a))?,
    };
    let out = run(initial, &params, &cfg.run_options())?;
    let path = cfg.output_path("timeseries.csv");
    let mut w = create(&path)?;
    out.series.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    for (t, field) in &out.snapshots {
        write_density(&cfg.output_path(&snapshot_name(*t)), field)?;
    }
    println!("steps: {}", out.steps);
    println!("dt_range: [{:.3e}, {:.3e}]", out.dt_range.0, out.dt_range.1);
    if let Some(last) = out.series.samples.last() {
        println!("final_mass: {:.15e}", last.mass);
        println!("final_N_total: {:.10e}", last.firing_rate);
    }
    Ok(())
}

fn oracle(cfg: &RunConfig) -> Outcome {
    let params = cfg.params()?;
    let grid = grid_for(cfg, &params)?;
    let start = coupling_from_rate(cfg.solver.rate, cfg.model.nu, &params)?;
    let mode = match cfg.oracle.mode {
        OracleMode::Frozen => CouplingMode::Frozen(start),
        OracleMode::MeanField => CouplingMode::MeanField { nu: cfg.model.nu },
    };
    let opts = cfg.oracle_options();
    let ensemble =
        ParticleEnsemble::sample_initial(opts.n, start.g_in, start.a, &params, opts.seed)?;
    let out = simulate(ensemble, &params, mode, &opts, &grid)?;
    let path = cfg.output_path("oracle_timeseries.csv");
    let mut w = create(&path)?;
    out.series.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    let (counts, outside) = out.ensemble.histogram(&grid);
    let path = cfg.output_path("oracle_histogram.csv");
    let mut w = create(&path)?;
    write_histogram_csv(&counts, &grid, &mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    println!("steady_rate: {:.10e}", out.steady_rate);
    println!("outside_grid: {outside}");
    Ok(())
}

fn verify(cfg: &RunConfig) -> Outcome {
    let reports = run_all(cfg.oracle.seed);
    for r in &reports {
        println!("{r}");
    }
    let path = cfg.output_path("verify_report.txt");
    let mut w = create(&path)?;
    write_report(&reports, &mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::VerifyFailed)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = RunConfig::load(cli.config.as_deref(), &cli.overrides)
        .map_err(Failure::from)
        .and_then(|cfg| {
            std::fs::create_dir_all(&cfg.output.directory).map_err(|e| {
                Failure::Config(format!(
                    "cannot create output directory {}: {e}",
                    cfg.output.directory.display()
                ))
            })?;
            match cli.command {
                Command::Steady => steady(&cfg),
                Command::PsiScan => psi_scan(&cfg),
                Command::FixedPoint => fixed_point(&cfg),
                Command::Evolve => evolve(&cfg),
                Command::Oracle => oracle(&cfg),
                Command::Verify => verify(&cfg),
            }
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::VerifyFailed) => {
            eprintln!("verification FAILED");
            ExitCode::from(3)
        }
    }
}
