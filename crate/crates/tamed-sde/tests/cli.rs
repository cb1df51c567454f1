use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tamed_sde::ensemble_io;
use tamed_sde::report::{load_convergence_report, CSV_HEADER};
use tamed_sde_core::PathEnsemble;

const SMALL_OU: [&str; 3] = [
    "experiment.m=2000",
    "experiment.checkpoint_times=[2.0, 3.0, 4.0]",
    "experiment.eta_ref=0.01",
];

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn tsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsde"))
        .args(args)
        .env_remove("TSDE_OUT")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn converge_ou_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ou.toml");
    let out = dir.path().join("run");
    let mut args = vec![
        "converge",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "both",
    ];
    args.extend(SMALL_OU);
    let o = tsde(&args);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(
        stdout
            .lines()
            .all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")),
        "{stdout}"
    );

    let report = load_convergence_report(&out.join("report.json")).unwrap();
    assert_eq!(report.series.len(), 3);
    assert_eq!(
        json(&out.join("report.json"))["config_hash"],
        report.config_hash.as_str()
    );

    let csv = std::fs::read_to_string(out.join("distances.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), report.series.len());
}

#[test]
fn seed_override_changes_output_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ou.toml");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "converge",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ];
        args.extend(SMALL_OU);
        assert!(tsde(&args).status.code().unwrap() <= 1);
        std::fs::read(out.join("distances.csv")).unwrap()
    };
    let a = run("a", "5");
    assert_eq!(a, run("b", "5"));
    assert_ne!(a, run("c", "6"));
}

#[test]
fn non_monotone_schedule_exits_one_naming_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("schedule-bad.toml");
    let o = tsde(&[
        "validate-schedule",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains('3'));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["report"]["first_non_monotone"], 3);
    assert_eq!(report["pass"], false);
}

#[test]
fn harmonic_schedule_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("schedule-harmonic.toml");
    let o = tsde(&[
        "validate-schedule",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        json(&dir.path().join("report.json"))["report"]["theta_min"],
        20.0
    );
}

#[test]
fn usage_errors_exit_two() {
    let cfg = config("ou.toml");
    let cfg = cfg.to_str().unwrap();
    let unknown_flag = tsde(&["converge", "--config", cfg, "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    assert!(!unknown_flag.stderr.is_empty());
    assert_eq!(tsde(&["converge"]).status.code(), Some(2));
    assert_eq!(
        tsde(&["converge", "--config", cfg, "experiment.nope=1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        tsde(&["converge", "--config", cfg, "experiment.m=abc"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        tsde(&["converge", "--config", "/nonexistent/x.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(tsde(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("schedule-harmonic.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_tsde"))
        .args(["validate-schedule", "--config", cfg.to_str().unwrap()])
        .env("TSDE_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn check_assumptions_passes_for_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("double-well.toml");
    let o = tsde(&[
        "check-assumptions",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn simulate_dumps_readable_ensembles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = tsde(&[
        "simulate",
        "--out",
        out,
        "--seed",
        "9",
        "experiment.m=128",
        "experiment.checkpoints=[10, 40]",
        "moments.m=128",
        "moments.check_doubling=false",
        "--format",
        "both",
    ]);
    assert!(
        o.status.code().unwrap() <= 1,
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let bin = ensemble_io::read_binary(&dir.path().join("ensemble_40.bin")).unwrap();
    assert_eq!((bin.dim(), bin.len()), (1, 128));
    let csv = ensemble_io::read_csv(&dir.path().join("ensemble_40.csv")).unwrap();
    assert_eq!(bin.samples(), csv.samples());
    assert!(dir.path().join("moments.json").exists());
}

#[test]
fn ensemble_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<f64> = (0..30)
        .map(|i| (i as f64 * 0.37).sin() * 1e3 + 1e-300)
        .collect();
    let e = PathEnsemble::from_samples(3, samples).unwrap();
    let b = dir.path().join("e.bin");
    let c = dir.path().join("e.csv");
    ensemble_io::write_binary(&b, &e).unwrap();
    ensemble_io::write_csv(&c, &e).unwrap();
    assert_eq!(ensemble_io::read_binary(&b).unwrap().samples(), e.samples());
    assert_eq!(ensemble_io::read_csv(&c).unwrap().samples(), e.samples());

    let mut bytes = std::fs::read(&b).unwrap();
    bytes[0] = b'X';
    assert!(ensemble_io::decode(&bytes, &b).is_err());
    assert!(ensemble_io::decode(&bytes[..10], &b).is_err());
}
