//! Kalman filtering with observations arriving at the jumps of a Poisson
//! clock: the optimal filter, its mean-field reference, the ensemble Kalman
//! filter, scalar moment theory and an experiment harness.

pub mod ensemble;
pub mod error;
pub mod generator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optimal;
pub mod rng;
pub mod sde;
pub mod theory;

pub use error::{Error, Result};
pub use model::LinearGaussianModel;
pub use rng::{RngStream, RoleTag};
