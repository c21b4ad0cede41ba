//! Model simulation: Poisson sampling clock, exact linear-SDE stepping and
//! event-aligned state trajectories with their noisy observations.

mod clock;
mod grid;
mod ou;
mod simulate;

pub use clock::{sample_clock, PoissonClock};
pub use grid::{EventGrid, GridPoint};
pub use ou::{euler_maruyama_step, exact_ou_step, OuPropagator, StepCache};
pub use simulate::{sample_initial_state, simulate_state, ObservationEvent, StateTrajectory};
