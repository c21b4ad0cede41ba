use nalgebra::DVector;

use super::clock::PoissonClock;
use super::grid::EventGrid;
use super::ou::StepCache;
use crate::error::{Error, Result};
use crate::model::LinearGaussianModel;
use crate::rng::{RngStream, RoleTag};

/// A measurement taken at a sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEvent {
    pub time: f64,
    pub y: DVector<f64>,
    /// The realized measurement noise, so `y = C x(time) + measurement_noise`.
    pub measurement_noise: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub grid: EventGrid,
    /// State at every grid point.
    pub states: Vec<DVector<f64>>,
    pub events: Vec<ObservationEvent>,
}

impl StateTrajectory {
    /// States at the uniform reporting times.
    pub fn uniform_states(&self) -> impl Iterator<Item = &DVector<f64>> + '_ {
        self.grid
            .points()
            .iter()
            .zip(&self.states)
            .filter(|(p, _)| p.uniform.is_some())
            .map(|(_, x)| x)
    }
}

/// Draws `x_0 ~ N(x0_mean, x0_cov)`.
pub fn sample_initial_state(model: &LinearGaussianModel, rng: &mut RngStream) -> DVector<f64> {
    let mut xi = DVector::zeros(model.state_dim());
    rng.fill_standard_normal(xi.as_mut_slice());
    model.x0_mean() + model.x0_sqrt() * xi
}

/// Simulates the true state on the event-aligned grid of `clock` and emits
/// one observation per jump time.
///
/// `rng` drives the initial state and process noise; measurement noise is
/// drawn from its `MeasurementNoise` sibling.
pub fn simulate_state(
    model: &LinearGaussianModel,
    clock: &PoissonClock,
    grid_dt: f64,
    rng: &mut RngStream,
) -> Result<StateTrajectory> {
    let grid = EventGrid::new(clock.horizon(), grid_dt, clock.jump_times())?;
    let mut meas_rng = rng.sibling(RoleTag::MeasurementNoise);
    let cache = StepCache::new(model, grid.spacing())?;

    let mut states = Vec::with_capacity(grid.len());
    let mut events = Vec::with_capacity(clock.len());
    let mut x = sample_initial_state(model, rng);
    for (i, point) in grid.points().iter().enumerate() {
        if i > 0 {
            let dt = point.t - grid.points()[i - 1].t;
            x = if grid.is_full_step(i) {
                cache.full().step(&x, rng)
            } else {
                cache.partial(model, dt)?.step(&x, rng)
            };
        }
        if point.event.is_some() {
            let mut xi = DVector::zeros(model.obs_dim());
            meas_rng.fill_standard_normal(xi.as_mut_slice());
            let noise = model.v_sqrt() * xi;
            let y = model.c() * &x + &noise;
            events.push(ObservationEvent { time: point.t, y, measurement_noise: noise });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("state diverged at t={}", point.t)));
        }
        states.push(x.clone());
    }
    Ok(StateTrajectory { grid, states, events })
}
