use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Realized arrival times of a Poisson counter on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonClock {
    lambda: f64,
    horizon: f64,
    jump_times: Vec<f64>,
}

impl PoissonClock {
    /// Builds a clock from given jump times, which must be strictly
    /// increasing and lie in `(0, horizon]`.
    pub fn from_jump_times(lambda: f64, horizon: f64, jump_times: Vec<f64>) -> Result<Self> {
        check_rate(lambda, horizon)?;
        let mut prev = 0.0;
        for &t in &jump_times {
            if !(t > prev && t <= horizon) {
                return Err(Error::invalid(format!(
                    "jump times must be strictly increasing in (0, {horizon}], found {t} after {prev}"
                )));
            }
            prev = t;
        }
        Ok(Self { lambda, horizon, jump_times })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// `N_t`: number of jump times `<= t`.
    pub fn count_at(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }
}

fn check_rate(lambda: f64, horizon: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be nonnegative, got {horizon}")));
    }
    Ok(())
}

/// Samples jump times as cumulative sums of Exponential(`lambda`) gaps,
/// truncated at `horizon`. A zero horizon yields an empty clock.
pub fn sample_clock(lambda: f64, horizon: f64, rng: &mut RngStream) -> Result<PoissonClock> {
    check_rate(lambda, horizon)?;
    let mut jump_times = Vec::with_capacity((lambda * horizon * 1.2) as usize + 4);
    let mut t = 0.0;
    loop {
        let gap = rng.exponential(lambda);
        if gap <= 0.0 {
            continue;
        }
        t += gap;
        if t > horizon {
            break;
        }
        jump_times.push(t);
    }
    Ok(PoissonClock { lambda, horizon, jump_times })
}
