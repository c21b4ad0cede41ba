use crate::error::{Error, Result};

/// One point of an event-aligned grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub t: f64,
    /// Index `k` when this is the uniform point `k * spacing`.
    pub uniform: Option<usize>,
    /// Index of the observation event at this time.
    pub event: Option<usize>,
}

/// Uniform grid of spacing `<= grid_dt` on `[0, horizon]` with every jump
/// time inserted exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGrid {
    points: Vec<GridPoint>,
    spacing: f64,
    n_uniform: usize,
    horizon: f64,
}

/// Jump times closer than this (relative to the horizon) to a uniform point
/// share that grid point.
const MERGE_TOL: f64 = 1e-12;

impl EventGrid {
    pub fn new(horizon: f64, grid_dt: f64, jump_times: &[f64]) -> Result<Self> {
        if !(grid_dt > 0.0 && grid_dt.is_finite()) {
            return Err(Error::invalid(format!("grid_dt must be positive, got {grid_dt}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be nonnegative, got {horizon}")));
        }
        let k_max = if horizon == 0.0 {
            0
        } else {
            ((horizon / grid_dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
        };
        let spacing = if k_max == 0 { grid_dt } else { horizon / k_max as f64 };
        let uniform_t = |k: usize| if k == k_max { horizon } else { k as f64 * spacing };
        let tol = MERGE_TOL * horizon.max(1.0);

        let mut points = Vec::with_capacity(k_max + 1 + jump_times.len());
        let mut j = 0;
        for k in 0..=k_max {
            let tk = uniform_t(k);
            while j < jump_times.len() && jump_times[j] < tk - tol {
                points.push(GridPoint { t: jump_times[j], uniform: None, event: Some(j) });
                j += 1;
            }
            if j < jump_times.len() && (jump_times[j] - tk).abs() <= tol {
                points.push(GridPoint { t: jump_times[j], uniform: Some(k), event: Some(j) });
                j += 1;
            } else {
                points.push(GridPoint { t: tk, uniform: Some(k), event: None });
            }
        }
        if j != jump_times.len() {
            return Err(Error::invalid(format!(
                "jump time {} lies beyond the horizon {horizon}",
                jump_times[j]
            )));
        }
        if let Some(p) = points.first() {
            if p.event.is_some() {
                return Err(Error::invalid("jump times must be strictly positive"));
            }
        }
        Ok(Self { points, spacing, n_uniform: k_max + 1, horizon })
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.t)
    }

    /// Spacing of the uniform backbone.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of uniform points `0, spacing, ..., horizon`.
    pub fn n_uniform(&self) -> usize {
        self.n_uniform
    }

    /// Uniform reporting times `k * spacing`, `k = 0..n_uniform`.
    pub fn uniform_times(&self) -> Vec<f64> {
        let last = self.n_uniform - 1;
        (0..self.n_uniform)
            .map(|k| if k == last && k > 0 { self.horizon } else { k as f64 * self.spacing })
            .collect()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// True when the segment ending at point `i` is a full uniform step, so
    /// a cached full-step transition applies.
    pub fn is_full_step(&self, i: usize) -> bool {
        i > 0
            && self.points[i].event.is_none()
            && self.points[i - 1].event.is_none()
            && self.points[i].uniform.is_some()
            && self.points[i - 1].uniform.is_some()
    }
}
