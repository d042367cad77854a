use std::path::Path;
use std::process::{Command, Output};

fn vck(dir: &Path, args: &[&str]) -> Output {
    let out_dir = format!("output.directory={}", dir.display());
    Command::new(env!("CARGO_BIN_EXE_vck"))
        .args(["--set", &out_dir])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Mass of a `v,g,p` table on a uniform grid with the given spacings.
fn csv_mass(path: &Path, h_v: f64, h_g: f64) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("v,g,p"));
    lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum::<f64>()
        * h_v
        * h_g
}

const SMALL: [&str; 6] = [
    "--set",
    "grid.I=32",
    "--set",
    "grid.J=96",
    "--set",
    "grid.g_max=12",
];

#[test]
fn steady_writes_normalised_density() {
    let dir = tempfile::tempdir().unwrap();
    let o = vck(dir.path(), &[&SMALL[..], &["steady"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["density.csv", "marginal.csv", "firing.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let mass = csv_mass(&dir.path().join("density.csv"), 1.0 / 32.0, 12.0 / 96.0);
    assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
}

#[test]
fn ordering_violation_exits_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = vck(
        dir.path(),
        &["--set", "model.V_F=2", "--set", "model.V_E=1", "steady"],
    );
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("V_E") && msg.contains("V_F < V_E"), "{msg}");
}

#[test]
fn unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = vck(dir.path(), &["--set", "grid.K=3", "steady"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('K'), "{}", stderr(&o));
}

#[test]
fn unreadable_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = vck(
        dir.path(),
        &["--config", missing.to_str().unwrap(), "steady"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = vck(
        dir.path(),
        &[
            &SMALL[..],
            &[
                "--set",
                "solver.max_iter=1",
                "--set",
                "solver.tol=1e-14",
                "steady",
            ],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn strong_coupling_has_no_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = vck(
        dir.path(),
        &[
            "--set",
            "grid.I=16",
            "--set",
            "grid.J=96",
            "--set",
            "model.S_E=0.4",
            "fixed-point",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no fixed point"));
}

#[test]
fn psi_scan_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = vck(
        dir.path(),
        &[
            "--set",
            "grid.I=16",
            "--set",
            "grid.J=96",
            "--set",
            "model.S_E=0.2",
            "psi-scan",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("psi_scan.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 10);
    assert!(stdout(&o).contains("sign_change"));
}

#[test]
fn evolve_writes_series_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        &SMALL[..],
        &[
            "--set",
            "run.T=0.2",
            "--set",
            "run.snapshots=[0.1]",
            "--set",
            "run.sample_dt=0.02",
            "evolve",
        ],
    ]
    .concat();
    let o = vck(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let series = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    assert_eq!(
        series.lines().next().unwrap(),
        "t,mass,N_total,g_in,a,psi,h1,h2,h3,h4,f,entropy,lq_monitor,chi2"
    );
    assert_eq!(series.lines().count(), 1 + 11);
    let snap = dir.path().join("snapshot_t0.100000.csv");
    let mass = csv_mass(&snap, 1.0 / 32.0, 12.0 / 96.0);
    assert!((mass - 1.0).abs() < 1e-10);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        &SMALL[..],
        &[
            "--set",
            "oracle.n=2000",
            "--set",
            "oracle.T=1",
            "--set",
            "oracle.seed=7",
            "oracle",
        ],
    ]
    .concat();
    for d in [&a, &b] {
        let o = vck(d.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = vck(d.path(), &[&SMALL[..], &["steady"]].concat());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "oracle_timeseries.csv",
        "oracle_histogram.csv",
        "density.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
}

#[test]
fn help_lists_every_key_with_units() {
    let o = Command::new(env!("CARGO_BIN_EXE_vck"))
        .arg("--help")
        .output()
        .unwrap();
    let help = stdout(&o);
    for key in [
        "model.g_L",
        "model.V_E",
        "model.V_F",
        "model.sigma_E",
        "model.S_E",
        "model.f_E",
        "model.N_E",
        "model.nu ",
        "model.nu_m",
        "model.nu_M",
        "grid.I",
        "grid.J",
        "grid.g_max",
        "solver.tol",
        "solver.max_iter",
        "solver.rate_tol",
        "solver.rate ",
        "solver.safety",
        "solver.dt_max",
        "run.T",
        "run.sample_dt",
        "run.snapshots",
        "run.K",
        "run.q",
        "run.ell",
        "run.scheme",
        "run.g0 ",
        "run.g0_var",
        "oracle.n",
        "oracle.T",
        "oracle.dt",
        "oracle.seed",
        "oracle.mode",
        "output.directory",
        "output.prefix",
    ] {
        assert!(help.contains(key), "help is missing {key}");
    }
}

#[test]
fn verify_passes_on_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("default.toml");
    let o = vck(
        dir.path(),
        &["--config", config.to_str().unwrap(), "verify"],
    );
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), stderr(&o));
    let report = std::fs::read_to_string(dir.path().join("verify_report.txt")).unwrap();
    assert!(report.contains("passed: 14/14"));
    assert!(report.trim_end().ends_with("status: PASS"));
}
