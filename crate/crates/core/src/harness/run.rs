//! Monte Carlo comparison runs: one shared world per realization, all
//! filters side by side, ordered aggregation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::stats::{upper_triangle, SeriesMoments, SymMatrixMoments};
use crate::ensemble::{run_ensemble_with, EnsembleOptions, ParticleStreams};
use crate::error::{Error, Result};
use crate::linalg::euclidean_distance;
use crate::optimal::{run_mean_field, run_optimal_with, FilterState};
use crate::rng::{RngStream, RoleTag};
use crate::sde::{sample_clock, simulate_state, EventGrid, ObservationEvent, PoissonClock, StateTrajectory};
use crate::theory::{expected_cov_odes, ultimate_bound};

/// Realizations evaluated in parallel before each ordered reduction.
const BATCH: usize = 64;

/// Aggregated statistics of one `(lambda, M)` pair on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSeries {
    pub lambda: f64,
    pub m: usize,
    pub grid: Vec<f64>,
    pub mean_diff_norm: Vec<f64>,
    pub mean_diff_stderr: Vec<f64>,
    pub opt_cov_trace: Vec<f64>,
    pub opt_cov_stderr: Vec<f64>,
    pub emp_cov_trace: Vec<f64>,
    pub emp_cov_stderr: Vec<f64>,
    /// Trace norm of `avg Q^M - avg P`.
    pub cov_gap: Vec<f64>,
    pub cov_gap_stderr: Vec<f64>,
    /// Realization average of the time-averaged mean difference norm.
    pub time_avg_mean_diff: f64,
    pub time_avg_mean_diff_stderr: f64,
    pub theory: Option<TheoryColumns>,
    pub successes: usize,
    pub failures: usize,
}

/// Expectation-ODE values on the same grid; scalar models only.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryColumns {
    pub p_cal: Vec<f64>,
    pub q_cal: Vec<f64>,
    /// `|Q_cal - P_cal|`, comparable with `cov_gap`.
    pub gap: Vec<f64>,
    /// `None` when the sampling rate is infeasible.
    pub bound: Option<f64>,
}

/// Spread of the mean-field sample around the optimal mean, per `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSummary {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Realization average of `|S_t - X_hat_t|^2`.
    pub sq_deviation: Vec<f64>,
    pub sq_deviation_stderr: Vec<f64>,
    /// Realization average of `tr P_t`, which `sq_deviation` should track.
    pub opt_cov_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRun {
    /// Ordered by `lambda`, then by `M`, as listed in the config.
    pub series: Vec<ComparisonSeries>,
    pub mean_field: Vec<MeanFieldSummary>,
}

impl ComparisonRun {
    pub fn get(&self, lambda: f64, m: usize) -> Option<&ComparisonSeries> {
        self.series.iter().find(|s| s.lambda == lambda && s.m == m)
    }
}

struct EnsembleTrace {
    mean_diff: Vec<f64>,
    emp_trace: Vec<f64>,
    gap: Vec<DVector<f64>>,
}

struct Realization {
    opt_trace: Vec<f64>,
    mf_sq: Vec<f64>,
    ensembles: Vec<EnsembleTrace>,
}

/// Order-sensitive hash of an event sequence.
pub fn event_fingerprint(events: &[ObservationEvent]) -> u64 {
    let mut h = DefaultHasher::new();
    for e in events {
        e.time.to_bits().hash(&mut h);
        for y in e.y.iter() {
            y.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn check_fingerprint(expected: u64, events: &[ObservationEvent], filter: &str) -> Result<()> {
    if event_fingerprint(events) == expected {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{filter} saw a different observation sequence")))
    }
}

/// The shared world of realization `r`: clock, true path and observations.
pub fn sample_world(cfg: &ExperimentConfig, lambda: f64, r: u32) -> Result<(PoissonClock, StateTrajectory)> {
    let mut world = RngStream::new(cfg.master_seed, r, RoleTag::StateNoise);
    let mut clock_rng = world.sibling(RoleTag::Clock);
    let clock = sample_clock(lambda, cfg.horizon, &mut clock_rng)?;
    let traj = simulate_state(&cfg.model, &clock, cfg.grid_dt, &mut world)?;
    Ok((clock, traj))
}

fn run_realization(cfg: &ExperimentConfig, lambda: f64, r: u32, n_uniform: usize) -> Result<Realization> {
    let model = &cfg.model;
    let (clock, traj) = sample_world(cfg, lambda, r)?;
    let (grid, events) = (&traj.grid, &traj.events);
    if grid.n_uniform() != n_uniform {
        return Err(Error::Numerical(format!("realization {r}: grid has {} uniform points", grid.n_uniform())));
    }
    let fingerprint = event_fingerprint(events);

    let mut opt: Vec<FilterState> = Vec::with_capacity(grid.len());
    check_fingerprint(fingerprint, events, "optimal filter")?;
    run_optimal_with(model, grid, events, |_, s| opt.push(s.clone()))?;
    let mut opt_trace = vec![0.0; n_uniform];
    for_uniform(grid, |i, k| opt_trace[k] = opt[i].cov.trace());

    check_fingerprint(fingerprint, events, "mean-field reference")?;
    let mut mf_rng = RngStream::new(cfg.master_seed, r, RoleTag::MeanField);
    let mf = run_mean_field(model, &clock, events, &opt, cfg.grid_dt, &mut mf_rng)?;
    let mut mf_sq = vec![0.0; n_uniform];
    for_uniform(grid, |i, k| mf_sq[k] = (&mf[i].s - &mf[i].s_hat).norm_squared());

    let options = EnsembleOptions { bessel_correction: cfg.bessel_correction };
    let mut ensembles = Vec::with_capacity(cfg.m_values.len());
    for &m in &cfg.m_values {
        check_fingerprint(fingerprint, events, "ensemble filter")?;
        let mut rngs = ParticleStreams::new(cfg.master_seed, r, m);
        let mut tr = EnsembleTrace {
            mean_diff: vec![0.0; n_uniform],
            emp_trace: vec![0.0; n_uniform],
            gap: vec![DVector::zeros(0); n_uniform],
        };
        run_ensemble_with(model, grid, events, m, &mut rngs, options, |i, s| {
            if let Some(k) = grid.points()[i].uniform {
                tr.mean_diff[k] = euclidean_distance(&opt[i].mean, s.emp_mean());
                tr.emp_trace[k] = s.emp_cov().trace();
                tr.gap[k] = upper_triangle(&(s.emp_cov() - &opt[i].cov));
            }
        })?;
        ensembles.push(tr);
    }

    let finite = opt_trace.iter().chain(&mf_sq).all(|x| x.is_finite())
        && ensembles.iter().all(|e| {
            e.mean_diff.iter().chain(&e.emp_trace).all(|x| x.is_finite())
                && e.gap.iter().all(|g| g.iter().all(|x| x.is_finite()))
        });
    if !finite {
        return Err(Error::Numerical(format!("realization {r} produced non-finite values")));
    }
    Ok(Realization { opt_trace, mf_sq, ensembles })
}

fn for_uniform(grid: &EventGrid, mut f: impl FnMut(usize, usize)) {
    for (i, p) in grid.points().iter().enumerate() {
        if let Some(k) = p.uniform {
            f(i, k);
        }
    }
}

/// Trapezoidal time average over a uniform grid.
fn time_average(ys: &[f64]) -> f64 {
    match ys.len() {
        0 => f64::NAN,
        1 => ys[0],
        n => (ys[1..n - 1].iter().sum::<f64>() + 0.5 * (ys[0] + ys[n - 1])) / (n - 1) as f64,
    }
}

struct Accumulator {
    opt: SeriesMoments,
    mf: SeriesMoments,
    diff: Vec<SeriesMoments>,
    emp: Vec<SeriesMoments>,
    gap: Vec<SymMatrixMoments>,
    avg_diff: Vec<SeriesMoments>,
    failures: usize,
}

impl Accumulator {
    fn new(len: usize, n_m: usize, dim: usize) -> Self {
        Self {
            opt: SeriesMoments::new(len),
            mf: SeriesMoments::new(len),
            diff: (0..n_m).map(|_| SeriesMoments::new(len)).collect(),
            emp: (0..n_m).map(|_| SeriesMoments::new(len)).collect(),
            gap: (0..n_m).map(|_| SymMatrixMoments::new(len, dim)).collect(),
            avg_diff: (0..n_m).map(|_| SeriesMoments::new(1)).collect(),
            failures: 0,
        }
    }

    fn push(&mut self, r: Realization) {
        self.opt.push(&r.opt_trace);
        self.mf.push(&r.mf_sq);
        for (j, e) in r.ensembles.into_iter().enumerate() {
            self.diff[j].push(&e.mean_diff);
            self.emp[j].push(&e.emp_trace);
            self.gap[j].push(&e.gap);
            self.avg_diff[j].push(&[time_average(&e.mean_diff)]);
        }
    }
}

/// Runs every `(lambda, M)` pair of `cfg`. Realization `r` derives all of
/// its streams from `(master_seed, r)`; with `aggregate = false` only
/// realization 0 is used. Failed realizations are excluded and counted.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonRun> {
    let n_real = if cfg.aggregate { cfg.n_realizations } else { 1 };
    let probe = EventGrid::new(cfg.horizon, cfg.grid_dt, &[])?;
    let grid = probe.uniform_times();
    let len = grid.len();
    let dim = cfg.model.state_dim();
    let mut run = ComparisonRun { series: Vec::new(), mean_field: Vec::new() };

    for &lambda in &cfg.lambda_values {
        let mut acc = Accumulator::new(len, cfg.m_values.len(), dim);
        let mut first_error = None;
        for start in (0..n_real).step_by(BATCH) {
            let end = (start + BATCH).min(n_real);
            let batch: Vec<Result<Realization>> =
                (start..end).into_par_iter().map(|r| run_realization(cfg, lambda, r as u32, len)).collect();
            for (offset, res) in batch.into_iter().enumerate() {
                match res {
                    Ok(r) => acc.push(r),
                    Err(e) => {
                        log::warn!("lambda={lambda}: realization {} failed: {e}", start + offset);
                        acc.failures += 1;
                        first_error.get_or_insert(e);
                    }
                }
            }
        }
        let successes = acc.opt.count();
        if successes == 0 {
            let e = first_error.expect("no realizations and no error");
            return Err(match e {
                e if e.is_validation() => e,
                e => Error::Numerical(format!("all {n_real} realizations failed at lambda={lambda}; first: {e}")),
            });
        }
        log::info!("lambda={lambda}: {successes} realizations aggregated, {} failed", acc.failures);

        for (j, &m) in cfg.m_values.iter().enumerate() {
            let (cov_gap, cov_gap_stderr) = acc.gap[j].trace_norm();
            let theory = theory_columns(cfg, lambda, m, len)?;
            run.series.push(ComparisonSeries {
                lambda,
                m,
                grid: grid.clone(),
                mean_diff_norm: acc.diff[j].mean().to_vec(),
                mean_diff_stderr: acc.diff[j].stderr(),
                opt_cov_trace: acc.opt.mean().to_vec(),
                opt_cov_stderr: acc.opt.stderr(),
                emp_cov_trace: acc.emp[j].mean().to_vec(),
                emp_cov_stderr: acc.emp[j].stderr(),
                cov_gap,
                cov_gap_stderr,
                time_avg_mean_diff: acc.avg_diff[j].mean()[0],
                time_avg_mean_diff_stderr: acc.avg_diff[j].stderr()[0],
                theory,
                successes,
                failures: acc.failures,
            });
        }
        run.mean_field.push(MeanFieldSummary {
            lambda,
            grid: grid.clone(),
            sq_deviation: acc.mf.mean().to_vec(),
            sq_deviation_stderr: acc.mf.stderr(),
            opt_cov_trace: acc.opt.mean().to_vec(),
        });
    }
    Ok(run)
}

fn theory_columns(cfg: &ExperimentConfig, lambda: f64, m: usize, len: usize) -> Result<Option<TheoryColumns>> {
    let Some(model) = cfg.scalar_model(lambda, m) else {
        return Ok(None);
    };
    let model = model?;
    let traj = expected_cov_odes(&model, cfg.horizon, cfg.grid_dt)?;
    if traj.grid.len() != len {
        return Err(Error::Numerical(format!("theory grid has {} points, reporting grid {len}", traj.grid.len())));
    }
    let bound = match ultimate_bound(&model) {
        Ok(b) => Some(b),
        Err(Error::Infeasible(msg)) => {
            log::warn!("lambda={lambda}, M={m}: {msg}; theory_bound marked infeasible");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(Some(TheoryColumns { gap: traj.e_cal.iter().map(|e| e.abs()).collect(), p_cal: traj.p_cal, q_cal: traj.q_cal, bound }))
}

/// Runs the comparison and attaches the theory columns; requires a scalar
/// model. Infeasible rates only blank the bound.
pub fn run_theory_overlay(cfg: &ExperimentConfig) -> Result<ComparisonRun> {
    if !cfg.is_scalar() {
        return Err(Error::invalid("theory overlay needs a scalar model"));
    }
    run_comparison(cfg)
}

/// Per-time summary of a single realization, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// True state, optimal mean, `tr P` and the observation count on the
/// uniform grid, for realization `r` at rate `lambda`.
pub fn simulate_trajectory(cfg: &ExperimentConfig, lambda: f64, r: u32) -> Result<TrajectoryTable> {
    let (_, traj) = sample_world(cfg, lambda, r)?;
    let n = cfg.model.state_dim();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=n).map(|i| format!("x_{i}")));
    columns.extend((1..=n).map(|i| format!("xhat_{i}")));
    columns.push("opt_cov_trace".to_string());
    columns.push("n_observations".to_string());
    let mut rows = Vec::with_capacity(traj.grid.n_uniform());
    let mut seen = 0usize;
    run_optimal_with(&cfg.model, &traj.grid, &traj.events, |i, s| {
        let p = traj.grid.points()[i];
        if p.event.is_some() {
            seen += 1;
        }
        if p.uniform.is_some() {
            let mut row = vec![p.t];
            row.extend(traj.states[i].iter());
            row.extend(s.mean.iter());
            row.push(s.cov.trace());
            row.push(seen as f64);
            rows.push(row);
        }
    })?;
    Ok(TrajectoryTable { columns, rows })
}

/// Weighted least-squares fit `gap ~ c / M`; returns `c` and the residual
/// z-scores `(gap_i - c / M_i) / se_i`.
pub fn inverse_m_fit(ms: &[usize], gaps: &[f64], stderrs: &[f64]) -> (f64, Vec<f64>) {
    let w: Vec<f64> = stderrs.iter().map(|s| 1.0 / (s * s).max(f64::MIN_POSITIVE)).collect();
    let x: Vec<f64> = ms.iter().map(|&m| 1.0 / m as f64).collect();
    let num: f64 = (0..ms.len()).map(|i| w[i] * x[i] * gaps[i]).sum();
    let den: f64 = (0..ms.len()).map(|i| w[i] * x[i] * x[i]).sum();
    let c = num / den;
    let z = (0..ms.len()).map(|i| (gaps[i] - c * x[i]) / stderrs[i]).collect();
    (c, z)
}
