use std::path::Path;
use std::process::{Command, Output};

fn poissonkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poissonkf")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn theory_prints_benchmark_report() {
    let out = poissonkf(&["theory", "--preset", "scalar-benchmark", "--M", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("gamma_bar        0.632748"), "{text}");
    assert!(text.contains("ultimate bound   0.070026"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with('{')).count(), 1);
}

#[test]
fn theory_marks_infeasible_rate() {
    let out = poissonkf(&["theory", "--A", "1", "--G", "1", "--C", "1", "--V", "0.5", "--P0", "0.01", "--lambda", "2.1", "--M", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("\"ultimate_bound\":\"infeasible\""));
}

#[test]
fn compare_writes_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = poissonkf(&["compare", "--preset", "paper-3.4", "--realizations", "2", "--horizon", "0.2", "--output", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        files(dir.path()),
        [
            "compare_lambda10_M10.csv",
            "compare_lambda10_M20.csv",
            "compare_lambda5_M10.csv",
            "compare_lambda5_M20.csv",
            "manifest.json"
        ]
    );
    let manifest = poissonkf::harness::RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.subcommand, "compare");
    assert_eq!(manifest.master_seed, 42);
    let cfg = poissonkf::harness::parse_config(&manifest.config, "manifest").unwrap();
    assert_eq!(cfg.n_realizations, 2);
    assert_eq!(cfg.horizon, 0.2);
    assert_eq!(cfg.model.state_dim(), 3);
}

#[test]
fn sweep_adds_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = poissonkf(&[
        "sweep", "--preset", "scalar-benchmark", "--realizations", "5", "--horizon", "0.5", "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(files(dir.path()).contains(&"sweep_summary.csv".to_string()));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("lambda=5 M=")).count(), 3);
}

#[test]
fn simulate_is_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = poissonkf(&[
            "simulate", "--preset", "paper-3.4", "--realizations", "1", "--horizon", "0.5", "--output",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(files(dir.path()), ["manifest.json", "trajectory_lambda5_r0.csv"]);
        std::fs::read(dir.path().join("trajectory_lambda5_r0.csv")).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,x_1,x_2,x_3,xhat_1,xhat_2,xhat_3,opt_cov_trace,n_observations\n"), "{}", &text[..80]);
}

#[test]
fn overrides_via_set_and_matrix_flags() {
    let out = poissonkf(&["theory", "--preset", "scalar-benchmark", "--set", "experiment.M_values=[20]", "--lambda", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("lambda=10 M=20"), "{text}");
    let out = poissonkf(&["theory", "--A", "-1", "--G", "1", "--C", "1", "--V", "0.5", "--P0", "2", "--M", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("P0=2"));
}

#[test]
fn usage_and_validation_errors_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["compare", "--no-such-flag"],
        &["theory", "--preset", "scalar-benchmark", "--M", "1"],
        &["theory", "--preset", "nonexistent"],
        &["theory", "--preset", "scalar-benchmark", "--set", "model.B=1"],
        &["theory", "--preset", "paper-3.4"],
        &["compare", "--preset", "scalar-benchmark", "--threads", "0"],
    ] {
        let out = poissonkf(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn help_lists_flags() {
    let out = poissonkf(&["compare", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for flag in ["--config", "--preset", "--seed", "--threads", "--output", "--realizations", "--lambda", "--M", "--set"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn numerical_blowup_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = poissonkf(&[
        "compare", "--preset", "scalar-benchmark", "--A", "800", "--realizations", "2", "--horizon", "2", "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "[model]\nA = -1.0\nG = 1.0\nC = 1.0\nV = 0.5\nP0 = 1.0\n[experiment]\nlambda_values = [5.0]\nM_values = [10]\n").unwrap();
    let out = poissonkf(&["theory", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("ultimate bound   0.070026"));
    std::fs::write(&path, "[model]\nA = -1.0\n[experiment\n").unwrap();
    let out = poissonkf(&["theory", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.toml:3:"));
}

#[test]
fn validate_generator_small_run() {
    let out = poissonkf(&["validate-generator", "--preset", "scalar-benchmark", "--realizations", "500", "--horizon", "0.5"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.ends_with("-> ok")).count(), 2);
}
