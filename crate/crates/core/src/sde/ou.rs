use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LinearGaussianModel;
use crate::rng::RngStream;

/// Exact one-step transition of the linear SDE over a fixed `dt`.
#[derive(Debug, Clone)]
pub struct OuPropagator {
    dt: f64,
    phi: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
}

impl OuPropagator {
    pub fn new(model: &LinearGaussianModel, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let (phi, sigma) = linalg::van_loan(model.a(), model.ggt(), dt);
        let sigma_sqrt = linalg::psd_sqrt(&sigma);
        Ok(Self { dt, phi, sigma, sigma_sqrt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `exp(A dt)`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Covariance of the one-step noise.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn step(&self, x: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
        let mut xi = DVector::zeros(x.len());
        rng.fill_standard_normal(xi.as_mut_slice());
        &self.phi * x + &self.sigma_sqrt * xi
    }

    /// Advances each column of `states` with the stream of the same index.
    pub fn step_columns(&self, states: &mut DMatrix<f64>, rngs: &mut [RngStream]) {
        let (n, m) = states.shape();
        debug_assert_eq!(m, rngs.len());
        let mut xi = DMatrix::zeros(n, m);
        for (col, rng) in rngs.iter_mut().enumerate() {
            for i in 0..n {
                xi[(i, col)] = rng.standard_normal();
            }
        }
        *states = &self.phi * &*states + &self.sigma_sqrt * xi;
    }

    /// Lyapunov flow of a covariance: `Phi P Phi^T + Sigma`.
    pub fn propagate_cov(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.phi * p * self.phi.transpose() + &self.sigma
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("dt must be positive, got {dt}")))
    }
}

/// Reuses the full-step transition of an event-aligned grid and builds the
/// partial-step ones on demand.
#[derive(Debug, Clone)]
pub struct StepCache {
    full: OuPropagator,
}

impl StepCache {
    pub fn new(model: &LinearGaussianModel, full_dt: f64) -> Result<Self> {
        Ok(Self { full: OuPropagator::new(model, full_dt)? })
    }

    pub fn full(&self) -> &OuPropagator {
        &self.full
    }

    pub fn partial(&self, model: &LinearGaussianModel, dt: f64) -> Result<OuPropagator> {
        OuPropagator::new(model, dt)
    }
}

/// `x' = exp(A dt) x + w`, `w ~ N(0, Sigma(dt))`.
pub fn exact_ou_step(
    model: &LinearGaussianModel,
    x: &DVector<f64>,
    dt: f64,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    check_state(model, x)?;
    Ok(OuPropagator::new(model, dt)?.step(x, rng))
}

/// `x' = x + A x dt + G sqrt(dt) xi`, `xi ~ N(0, I_m)`.
pub fn euler_maruyama_step(
    model: &LinearGaussianModel,
    x: &DVector<f64>,
    dt: f64,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    check_dt(dt)?;
    check_state(model, x)?;
    let mut xi = DVector::zeros(model.noise_dim());
    rng.fill_standard_normal(xi.as_mut_slice());
    Ok(x + model.a() * x * dt + model.g() * xi * dt.sqrt())
}

fn check_state(model: &LinearGaussianModel, x: &DVector<f64>) -> Result<()> {
    if x.len() == model.state_dim() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "state has length {}, model expects {}",
            x.len(),
            model.state_dim()
        )))
    }
}
