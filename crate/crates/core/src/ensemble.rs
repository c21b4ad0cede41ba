//! The M-particle ensemble filter with perturbed observations.
//!
//! Particles follow copies of the state SDE with their own process noise.
//! At a sampling time every particle is corrected with the empirical gain
//! `K = Q C^T (C Q C^T + V)^{-1}`, computed once from the pre-jump empirical
//! covariance, using the shared measurement and a private perturbation
//! `nu_l ~ N(0, V)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LinearGaussianModel;
use crate::optimal::{check_events, TIME_TOL};
use crate::rng::{RngStream, RoleTag};
use crate::sde::{EventGrid, ObservationEvent, OuPropagator, PoissonClock, StepCache};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnsembleOptions {
    /// Normalize the empirical covariance by `1/(M-1)` instead of `1/M`.
    pub bessel_correction: bool,
}

/// Ensemble snapshot. Particles are the columns of an `n x M` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub t: f64,
    particles: DMatrix<f64>,
    emp_mean: DVector<f64>,
    emp_cov: DMatrix<f64>,
    options: EnsembleOptions,
}

impl EnsembleState {
    pub fn from_particles(t: f64, particles: DMatrix<f64>, options: EnsembleOptions) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::invalid(format!("ensemble needs at least 2 particles, got {}", particles.ncols())));
        }
        let (emp_mean, emp_cov) = empirical_moments(&particles, options.bessel_correction);
        Ok(Self { t, particles, emp_mean, emp_cov, options })
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn emp_mean(&self) -> &DVector<f64> {
        &self.emp_mean
    }

    pub fn emp_cov(&self) -> &DMatrix<f64> {
        &self.emp_cov
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn options(&self) -> EnsembleOptions {
        self.options
    }

    fn refresh(&mut self) {
        let (m, c) = empirical_moments(&self.particles, self.options.bessel_correction);
        self.emp_mean = m;
        self.emp_cov = c;
    }
}

/// Empirical mean and covariance of the columns, recomputed from scratch.
pub fn empirical_moments(particles: &DMatrix<f64>, bessel: bool) -> (DVector<f64>, DMatrix<f64>) {
    let m = particles.ncols();
    let mean = particles.column_mean();
    let mut centered = particles.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let denom = if bessel { (m - 1) as f64 } else { m as f64 };
    let mut cov = &centered * centered.transpose() / denom;
    linalg::symmetrize(&mut cov);
    (mean, cov)
}

/// One independent stream per particle, shared by its initial draw, process
/// noise and observation perturbations.
#[derive(Debug, Clone)]
pub struct ParticleStreams(Vec<RngStream>);

impl ParticleStreams {
    pub fn new(master_seed: u64, stream_id: u32, m: usize) -> Self {
        Self((0..m).map(|l| RngStream::new(master_seed, stream_id, RoleTag::ParticleNoise(l as u32))).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_mut_slice(&mut self) -> &mut [RngStream] {
        &mut self.0
    }
}

fn check_streams(m: usize, rngs: &ParticleStreams) -> Result<()> {
    if rngs.len() == m {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} particle streams for {m} particles", rngs.len())))
    }
}

/// Draws `m` i.i.d. particles from the prior `N(x0_mean, x0_cov)`.
pub fn init_ensemble(
    model: &LinearGaussianModel,
    m: usize,
    rngs: &mut ParticleStreams,
    options: EnsembleOptions,
) -> Result<EnsembleState> {
    if m < 2 {
        return Err(Error::invalid(format!("ensemble size must be at least 2, got {m}")));
    }
    check_streams(m, rngs)?;
    let n = model.state_dim();
    let mut xi = DMatrix::zeros(n, m);
    for (l, rng) in rngs.as_mut_slice().iter_mut().enumerate() {
        for i in 0..n {
            xi[(i, l)] = rng.standard_normal();
        }
    }
    let mut particles = model.x0_sqrt() * xi;
    for mut col in particles.column_iter_mut() {
        col += model.x0_mean();
    }
    EnsembleState::from_particles(0.0, particles, options)
}

/// `K^M = Q^M C^T (C Q^M C^T + V)^{-1}`.
pub fn empirical_gain(state: &EnsembleState, model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
    linalg::kalman_gain(&state.emp_cov, model.c(), model.v())
}

pub fn ensemble_predict(
    state: &EnsembleState,
    model: &LinearGaussianModel,
    dt: f64,
    rngs: &mut ParticleStreams,
) -> Result<EnsembleState> {
    check_streams(state.size(), rngs)?;
    let prop = OuPropagator::new(model, dt)?;
    let mut next = state.clone();
    ensemble_predict_with(&mut next, &prop, rngs);
    Ok(next)
}

/// In-place prediction with a precomputed transition.
pub fn ensemble_predict_with(state: &mut EnsembleState, prop: &OuPropagator, rngs: &mut ParticleStreams) {
    prop.step_columns(&mut state.particles, rngs.as_mut_slice());
    state.t += prop.dt();
    state.refresh();
}

pub fn ensemble_update(
    state: &EnsembleState,
    event: &ObservationEvent,
    model: &LinearGaussianModel,
    rngs: &mut ParticleStreams,
) -> Result<EnsembleState> {
    let mut next = state.clone();
    ensemble_update_in_place(&mut next, event, model, rngs)?;
    Ok(next)
}

/// `S_l+ = S_l + K^M (y - C S_l - nu_l)` for every particle, with the gain
/// taken from the pre-update statistics.
pub fn ensemble_update_in_place(
    state: &mut EnsembleState,
    event: &ObservationEvent,
    model: &LinearGaussianModel,
    rngs: &mut ParticleStreams,
) -> Result<()> {
    check_streams(state.size(), rngs)?;
    if (event.time - state.t).abs() > TIME_TOL * state.t.abs().max(1.0) {
        return Err(Error::invalid(format!("event at t={} applied to ensemble at t={}", event.time, state.t)));
    }
    if event.y.len() != model.obs_dim() {
        return Err(Error::invalid("observation dimension does not match model"));
    }
    let k = empirical_gain(state, model)?;
    let p = model.obs_dim();
    let m = state.size();
    let mut xi = DMatrix::zeros(p, m);
    for (l, rng) in rngs.as_mut_slice().iter_mut().enumerate() {
        for i in 0..p {
            xi[(i, l)] = rng.standard_normal();
        }
    }
    let nu = model.v_sqrt() * xi;
    // innovations y - C S_l - nu_l, one column per particle
    let mut innov = -(model.c() * &state.particles) - nu;
    for mut col in innov.column_iter_mut() {
        col += &event.y;
    }
    state.particles += k * innov;
    state.refresh();
    Ok(())
}

/// Walks the event-aligned grid, calling `visit` at every grid point.
pub fn run_ensemble_with<F>(
    model: &LinearGaussianModel,
    grid: &EventGrid,
    events: &[ObservationEvent],
    m: usize,
    rngs: &mut ParticleStreams,
    options: EnsembleOptions,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &EnsembleState),
{
    let cache = StepCache::new(model, grid.spacing())?;
    let mut state = init_ensemble(model, m, rngs, options)?;
    for (i, point) in grid.points().iter().enumerate() {
        if i > 0 {
            if grid.is_full_step(i) {
                ensemble_predict_with(&mut state, cache.full(), rngs);
            } else {
                let prop = cache.partial(model, point.t - state.t)?;
                ensemble_predict_with(&mut state, &prop, rngs);
            }
            state.t = point.t;
        }
        if let Some(e) = point.event {
            ensemble_update_in_place(&mut state, &events[e], model, rngs)?;
        }
        visit(i, &state);
    }
    Ok(())
}

/// Runs an `m`-particle ensemble; returns its state at every grid point.
pub fn run_ensemble(
    model: &LinearGaussianModel,
    clock: &PoissonClock,
    events: &[ObservationEvent],
    m: usize,
    grid_dt: f64,
    rngs: &mut ParticleStreams,
    options: EnsembleOptions,
) -> Result<Vec<EnsembleState>> {
    check_events(clock, events)?;
    let grid = EventGrid::new(clock.horizon(), grid_dt, clock.jump_times())?;
    let mut out = Vec::with_capacity(grid.len());
    run_ensemble_with(model, &grid, events, m, rngs, options, |_, s| out.push(s.clone()))?;
    Ok(out)
}
