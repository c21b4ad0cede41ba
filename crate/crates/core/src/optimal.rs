//! The optimal continuous-discrete Kalman filter and its mean-field
//! reference process.
//!
//! Between sampling times the mean follows `dX = A X dt` and the covariance
//! the Lyapunov flow `dP = (AP + PA^T + GG^T) dt`; both are propagated with
//! the exact transition of the state SDE. At a sampling time the usual
//! Kalman correction is applied.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize_checked};
use crate::model::LinearGaussianModel;
use crate::rng::RngStream;
use crate::sde::{sample_initial_state, EventGrid, ObservationEvent, OuPropagator, PoissonClock, StepCache};

/// Time tolerance when matching an event to a filter time.
pub const TIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    pub fn initial(model: &LinearGaussianModel) -> Self {
        Self { t: 0.0, mean: model.x0_mean().clone(), cov: model.x0_cov().clone() }
    }

    /// `K = P C^T (C P C^T + V)^{-1}`.
    pub fn gain(&self, model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
        linalg::kalman_gain(&self.cov, model.c(), model.v())
    }
}

pub fn predict(model: &LinearGaussianModel, state: &FilterState, dt: f64) -> Result<FilterState> {
    check_dims(model, state)?;
    Ok(predict_with(&OuPropagator::new(model, dt)?, state))
}

/// Prediction with a precomputed transition.
pub fn predict_with(prop: &OuPropagator, state: &FilterState) -> FilterState {
    let mut cov = prop.propagate_cov(&state.cov);
    symmetrize_checked(&mut cov, "predict");
    FilterState { t: state.t + prop.dt(), mean: prop.phi() * &state.mean, cov }
}

/// Kalman correction at a sampling time.
pub fn update(model: &LinearGaussianModel, state: &FilterState, event: &ObservationEvent) -> Result<FilterState> {
    check_dims(model, state)?;
    if event.y.len() != model.obs_dim() {
        return Err(Error::invalid(format!(
            "observation has length {}, model expects {}",
            event.y.len(),
            model.obs_dim()
        )));
    }
    if (event.time - state.t).abs() > TIME_TOL * state.t.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "event at t={} applied to filter state at t={}",
            event.time, state.t
        )));
    }
    let k = state.gain(model)?;
    let innovation = &event.y - model.c() * &state.mean;
    let mean = &state.mean + &k * innovation;
    let mut cov = &state.cov - &k * model.c() * &state.cov;
    symmetrize_checked(&mut cov, "update");
    Ok(FilterState { t: state.t, mean, cov })
}

fn check_dims(model: &LinearGaussianModel, state: &FilterState) -> Result<()> {
    let n = model.state_dim();
    if state.mean.len() != n || state.cov.shape() != (n, n) {
        return Err(Error::invalid(format!("filter state dimension does not match model (n={n})")));
    }
    Ok(())
}

/// Checks that `events` are exactly the observations at the clock's jump times.
pub fn check_events(clock: &PoissonClock, events: &[ObservationEvent]) -> Result<()> {
    if clock.len() != events.len() {
        return Err(Error::invalid(format!(
            "clock has {} jump times but {} events were given",
            clock.len(),
            events.len()
        )));
    }
    for (k, (t, e)) in clock.jump_times().iter().zip(events).enumerate() {
        if *t != e.time {
            return Err(Error::invalid(format!("event {k} at t={} does not match jump time {t}", e.time)));
        }
    }
    Ok(())
}

/// Walks the event-aligned grid, calling `visit` with the filter state at
/// every grid point (post-correction at sampling times).
pub fn run_optimal_with<F>(
    model: &LinearGaussianModel,
    grid: &EventGrid,
    events: &[ObservationEvent],
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &FilterState),
{
    let cache = StepCache::new(model, grid.spacing())?;
    let mut state = FilterState::initial(model);
    for (i, point) in grid.points().iter().enumerate() {
        if i > 0 {
            let prev_t = state.t;
            state = if grid.is_full_step(i) {
                predict_with(cache.full(), &state)
            } else {
                predict_with(&cache.partial(model, point.t - prev_t)?, &state)
            };
            state.t = point.t;
        }
        if let Some(e) = point.event {
            state = update(model, &state, &events[e])?;
        }
        visit(i, &state);
    }
    Ok(())
}

/// Runs the optimal filter over `[0, horizon]`, returning its state on the
/// same event-aligned grid as the simulated trajectory.
pub fn run_optimal(
    model: &LinearGaussianModel,
    clock: &PoissonClock,
    events: &[ObservationEvent],
    grid_dt: f64,
) -> Result<Vec<FilterState>> {
    check_events(clock, events)?;
    let grid = EventGrid::new(clock.horizon(), grid_dt, clock.jump_times())?;
    let mut out = Vec::with_capacity(grid.len());
    run_optimal_with(model, &grid, events, |_, s| out.push(s.clone()))?;
    Ok(out)
}

/// The same filter written in counter form: on every grid segment the flow
/// is applied and then the jump term is multiplied by the counter
/// increment `N_t - N_{t-}`.
pub fn run_optimal_counter_form(
    model: &LinearGaussianModel,
    clock: &PoissonClock,
    events: &[ObservationEvent],
    grid_dt: f64,
) -> Result<Vec<FilterState>> {
    check_events(clock, events)?;
    let grid = EventGrid::new(clock.horizon(), grid_dt, clock.jump_times())?;
    let cache = StepCache::new(model, grid.spacing())?;
    let mut state = FilterState::initial(model);
    let mut out = Vec::with_capacity(grid.len());
    let mut counted = 0usize;
    for (i, point) in grid.points().iter().enumerate() {
        if i > 0 {
            state = if grid.is_full_step(i) {
                predict_with(cache.full(), &state)
            } else {
                predict_with(&cache.partial(model, point.t - state.t)?, &state)
            };
            state.t = point.t;
        }
        let d_n = clock.count_at(point.t) - counted;
        for _ in 0..d_n {
            state = update(model, &state, &events[counted])?;
            counted += 1;
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// State of the mean-field reference process. `q` is the coupling
/// covariance, which coincides with the optimal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub t: f64,
    pub s: DVector<f64>,
    /// Conditional mean of `s`; equal to the optimal mean.
    pub s_hat: DVector<f64>,
    pub q: DMatrix<f64>,
}

/// Simulates one sample of the mean-field process, driven by noise copies
/// drawn from `rng` and coupled through the optimal covariance.
pub fn run_mean_field(
    model: &LinearGaussianModel,
    clock: &PoissonClock,
    events: &[ObservationEvent],
    optimal: &[FilterState],
    grid_dt: f64,
    rng: &mut RngStream,
) -> Result<Vec<MeanFieldState>> {
    check_events(clock, events)?;
    let grid = EventGrid::new(clock.horizon(), grid_dt, clock.jump_times())?;
    if optimal.len() != grid.len() {
        return Err(Error::invalid(format!(
            "optimal filter has {} states, grid has {} points",
            optimal.len(),
            grid.len()
        )));
    }
    let cache = StepCache::new(model, grid.spacing())?;
    let mut walker = MeanFieldWalker::new(model, rng);
    let mut out = Vec::with_capacity(grid.len());
    for (i, point) in grid.points().iter().enumerate() {
        if (optimal[i].t - point.t).abs() > TIME_TOL * point.t.max(1.0) {
            return Err(Error::invalid(format!("optimal state {i} is at t={}, grid at {}", optimal[i].t, point.t)));
        }
        if i > 0 {
            let partial;
            let prop = if grid.is_full_step(i) {
                cache.full()
            } else {
                partial = cache.partial(model, point.t - grid.points()[i - 1].t)?;
                &partial
            };
            walker.predict(prop, rng);
            if let Some(e) = point.event {
                // coupling covariance just before the jump
                let mut prior = prop.propagate_cov(&optimal[i - 1].cov);
                linalg::symmetrize(&mut prior);
                walker.update(model, &prior, &events[e], rng)?;
            }
        }
        out.push(MeanFieldState { t: point.t, s: walker.s.clone(), s_hat: optimal[i].mean.clone(), q: optimal[i].cov.clone() });
    }
    Ok(out)
}

/// Step-level driver for one mean-field sample.
#[derive(Debug, Clone)]
pub struct MeanFieldWalker {
    pub s: DVector<f64>,
    v_sqrt: DMatrix<f64>,
}

impl MeanFieldWalker {
    pub fn new(model: &LinearGaussianModel, rng: &mut RngStream) -> Self {
        Self { s: sample_initial_state(model, rng), v_sqrt: model.v_sqrt().clone() }
    }

    pub fn predict(&mut self, prop: &OuPropagator, rng: &mut RngStream) {
        self.s = prop.step(&self.s, rng);
    }

    /// `S+ = S + Q C^T (C Q C^T + V)^{-1} (y - C S - nu_bar)` with a fresh
    /// `nu_bar ~ N(0, V)`; `q` is the pre-jump coupling covariance.
    pub fn update(
        &mut self,
        model: &LinearGaussianModel,
        q: &DMatrix<f64>,
        event: &ObservationEvent,
        rng: &mut RngStream,
    ) -> Result<()> {
        let k = linalg::kalman_gain(q, model.c(), model.v())?;
        let mut xi = DVector::zeros(model.obs_dim());
        rng.fill_standard_normal(xi.as_mut_slice());
        let nu_bar = &self.v_sqrt * xi;
        self.s += k * (&event.y - model.c() * &self.s - nu_bar);
        Ok(())
    }
}
