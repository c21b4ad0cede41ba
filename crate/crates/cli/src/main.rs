//! `poissonkf`: simulate, compare and analyse Kalman filters fed by
//! Poisson-sampled observations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use poissonkf::generator::{dynkin_check, jump_riccati_spec, ou_spec, DynkinOptions, TestFunction};
use poissonkf::harness::{
    config::DEFAULT_SEED, output::write_trajectory_csv, parse_config_with_overrides, run_comparison, simulate_trajectory,
    write_comparison, write_sweep_summary, ExperimentConfig, RunManifest,
};
use poissonkf::theory::{check_sampling_rate, expected_cov_odes};
use poissonkf::Error;

#[derive(Parser, Debug)]
#[command(name = "poissonkf", version, about = "Optimal and ensemble Kalman filtering with Poisson-sampled observations")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the true state, optimal mean and covariance trace of single realizations.
    Simulate(Common),
    /// Run the filter comparison and write one CSV per (lambda, M) plus a manifest.
    Compare(Common),
    /// Like `compare`, plus a summary table with a c/M fit of the terminal covariance gap.
    Sweep(Common),
    /// Print the scalar convergence report for each (lambda, M).
    Theory(Common),
    /// Monte Carlo check of the Dynkin formula on two reference processes.
    ValidateGenerator(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file with [model], [experiment] and [output] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: paper-3.4 or scalar-benchmark.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed for every random stream.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of Monte Carlo realizations (paths for validate-generator).
    #[arg(long)]
    realizations: Option<usize>,
    /// Drift matrix; rows separated by `;`, entries by `,`.
    #[arg(long = "A", allow_hyphen_values = true)]
    a: Option<String>,
    /// Noise gain matrix.
    #[arg(long = "G", allow_hyphen_values = true)]
    g: Option<String>,
    /// Observation matrix.
    #[arg(long = "C", allow_hyphen_values = true)]
    c: Option<String>,
    /// Measurement noise covariance.
    #[arg(long = "V", allow_hyphen_values = true)]
    v: Option<String>,
    /// Sampling rates, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// Ensemble sizes, comma-separated.
    #[arg(long = "M", allow_hyphen_values = true)]
    m: Option<String>,
    /// Scalar prior variance.
    #[arg(long = "P0", allow_hyphen_values = true)]
    p0: Option<String>,
    /// Scalar initial ensemble variance used by the theory (default P0).
    #[arg(long = "Q0M", allow_hyphen_values = true)]
    q0m: Option<String>,
    /// Time horizon T.
    #[arg(long, allow_hyphen_values = true)]
    horizon: Option<String>,
    /// Reporting grid step.
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    /// Average over realizations (true) or report realization 0 only (false).
    #[arg(long)]
    aggregate: Option<bool>,
    /// Extra `section.key=value` overrides; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// `1,2;3,4` to `[[1,2],[3,4]]`; `1,2` to `[1,2]`.
fn matrix_literal(s: &str) -> String {
    if s.contains(';') {
        let rows: Vec<String> = s.split(';').map(|r| format!("[{}]", r.trim())).collect();
        format!("[{}]", rows.join(","))
    } else if s.contains(',') {
        format!("[{s}]")
    } else {
        s.to_string()
    }
}

fn list_literal(s: &str) -> String {
    format!("[{s}]")
}

fn build_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?,
        None => String::new(),
    };
    let origin = c.config.as_ref().map_or("<command line>".to_string(), |p| p.display().to_string());
    let mut ov: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| ov.push((k.to_string(), v));
    if let Some(p) = &c.preset {
        push("experiment.preset", format!("\"{p}\""));
    }
    if c.seed > i64::MAX as u64 {
        return Err(Error::Config { key: "--seed".into(), message: "must be below 2^63".into() });
    }
    push("experiment.master_seed", c.seed.to_string());
    if let Some(x) = &c.output {
        push("output.dir", format!("{:?}", x.display().to_string()));
    }
    if let Some(x) = c.realizations {
        push("experiment.n_realizations", x.to_string());
    }
    for (key, val) in [("model.A", &c.a), ("model.G", &c.g), ("model.C", &c.c), ("model.V", &c.v)] {
        if let Some(v) = val {
            push(key, matrix_literal(v));
        }
    }
    if let Some(x) = &c.lambda {
        push("experiment.lambda_values", list_literal(x));
    }
    if let Some(x) = &c.m {
        push("experiment.M_values", list_literal(x));
    }
    for (key, val) in [("model.P0", &c.p0), ("model.Q0M", &c.q0m), ("experiment.horizon", &c.horizon), ("experiment.grid_dt", &c.dt)] {
        if let Some(v) = val {
            push(key, v.clone());
        }
    }
    if let Some(x) = c.aggregate {
        push("experiment.aggregate", x.to_string());
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config { key: kv.clone(), message: "expected KEY=VALUE".into() })?;
        push(k.trim(), v.trim().to_string());
    }
    parse_config_with_overrides(&text, &origin, &ov)
}

fn write_manifest(dir: &Path, name: &str, cfg: &ExperimentConfig, run: Option<&poissonkf::harness::ComparisonRun>, outputs: &[PathBuf], start: Instant) -> Result<PathBuf, Error> {
    let path = dir.join("manifest.json");
    RunManifest::new(name, cfg, run, outputs, start.elapsed().as_secs_f64()).write(&path)?;
    Ok(path)
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(), Error> {
    let start = Instant::now();
    let lambda = cfg.lambda_values[0];
    let mut outputs = Vec::new();
    for r in 0..cfg.n_realizations {
        let table = simulate_trajectory(cfg, lambda, r as u32)?;
        let path = cfg.output_dir.join(format!("trajectory_lambda{lambda}_r{r}.csv"));
        write_trajectory_csv(&path, &table)?;
        outputs.push(path);
    }
    let m = write_manifest(&cfg.output_dir, "simulate", cfg, None, &outputs, start)?;
    println!("wrote {} trajectory file(s) and {}", outputs.len(), m.display());
    Ok(())
}

fn cmd_compare(cfg: &ExperimentConfig, sweep: bool) -> Result<(), Error> {
    let start = Instant::now();
    let run = run_comparison(cfg)?;
    let mut outputs = write_comparison(&cfg.output_dir, &run)?;
    if sweep {
        let path = cfg.output_dir.join("sweep_summary.csv");
        write_sweep_summary(&path, &run)?;
        outputs.push(path);
    }
    let name = if sweep { "sweep" } else { "compare" };
    let m = write_manifest(&cfg.output_dir, name, cfg, Some(&run), &outputs, start)?;
    for s in &run.series {
        println!(
            "lambda={} M={}: time-avg |xhat - mean| = {:.6} +- {:.6}, terminal cov gap = {:.6} +- {:.6} ({} ok, {} failed)",
            s.lambda,
            s.m,
            s.time_avg_mean_diff,
            s.time_avg_mean_diff_stderr,
            s.cov_gap.last().unwrap(),
            s.cov_gap_stderr.last().unwrap(),
            s.successes,
            s.failures
        );
    }
    println!("wrote {} file(s) and {}", outputs.len(), m.display());
    Ok(())
}

fn cmd_theory(cfg: &ExperimentConfig) -> Result<(), Error> {
    if !cfg.is_scalar() {
        return Err(Error::InvalidArgument("theory needs a scalar model (1x1 A, G, C, V)".into()));
    }
    for &lambda in &cfg.lambda_values {
        for &m in &cfg.m_values {
            let model = cfg.scalar_model(lambda, m).expect("scalar")?;
            let report = check_sampling_rate(&model);
            println!("{report}");
            println!("{}", report.to_json());
        }
    }
    Ok(())
}

fn cmd_validate_generator(c: &Common, cfg: &ExperimentConfig) -> Result<(), Error> {
    let n_paths = c.realizations.unwrap_or(10_000);
    let x = |v: f64| DVector::from_element(1, v);
    let mut ok = true;

    let horizon = 2.0;
    let ou = dynkin_check(
        &ou_spec(-1.0, 1.0),
        &TestFunction::coordinate_polynomial(1, 0, vec![0.0, 0.0, 1.0]),
        &x(0.0),
        DynkinOptions { horizon, n_paths, dt: 1e-3 },
        cfg.master_seed,
    )?;
    let exact = 0.5 * (1.0 - (-4.0_f64).exp());
    ok &= report_dynkin("OU, psi = x^2", ou, exact);

    let Some(model) = cfg.scalar_model(cfg.lambda_values[0], cfg.m_values[0]) else {
        return Err(Error::InvalidArgument("validate-generator needs a scalar model".into()));
    };
    let model = model?;
    let t = cfg.horizon;
    let odes = expected_cov_odes(&model, t, 1e-3)?;
    let spec = jump_riccati_spec(model.a, model.g, model.c, model.v, model.lambda)?;
    let ric = dynkin_check(
        &spec,
        &TestFunction::coordinate_polynomial(1, 0, vec![0.0, 1.0]),
        &x(model.p0),
        DynkinOptions { horizon: t, n_paths, dt: 2e-3 },
        cfg.master_seed,
    )?;
    ok &= report_dynkin("jump Riccati, psi = P", ric, *odes.p_cal.last().unwrap());
    if ok {
        Ok(())
    } else {
        Err(Error::Numerical("an estimate is more than 4 pooled standard errors from its reference".into()))
    }
}

fn report_dynkin(name: &str, r: poissonkf::generator::DynkinReport, reference: f64) -> bool {
    let close = |x: f64| (x - reference).abs() <= 4.0 * r.mc_stderr;
    let ok = close(r.mc_estimate) && close(r.dynkin_estimate) && r.discrepancy() <= 4.0;
    println!(
        "{name}: direct {:.6}, dynkin {:.6}, reference {:.6}, pooled se {:.2e} -> {}",
        r.mc_estimate,
        r.dynkin_estimate,
        reference,
        r.mc_stderr,
        if ok { "ok" } else { "MISMATCH" }
    );
    ok
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Compare(c) | Command::Sweep(c) | Command::Theory(c) | Command::ValidateGenerator(c) => c.clone(),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config { key: "--threads".into(), message: "must be positive".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    }
    let cfg = build_config(&common)?;
    match cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Compare(_) => cmd_compare(&cfg, false),
        Command::Sweep(_) => cmd_compare(&cfg, true),
        Command::Theory(_) => cmd_theory(&cfg),
        Command::ValidateGenerator(_) => cmd_validate_generator(&common, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
