//! Scalar analysis layer: expectation ODEs for the optimal and empirical
//! covariances and means, the contraction constant `gamma_bar`, the
//! sampling-rate condition and the ultimate approximation bound.
//!
//! Notation follows the filters: `P` is the optimal covariance, `Q` the
//! empirical covariance of an `M`-particle ensemble, and the calligraphic
//! quantities are their expectations over the sampling times and noises.

use serde::Serialize;

use crate::error::{Error, Result};

/// Scalar system and ensemble parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarModel {
    pub a: f64,
    pub g: f64,
    pub c: f64,
    pub v: f64,
    pub lambda: f64,
    /// Ensemble size.
    pub m: u64,
    pub p0: f64,
    /// Initial value of the expected empirical covariance.
    pub q0m: f64,
}

impl ScalarModel {
    /// Validates and builds; `q0m` defaults to `p0`.
    pub fn new(a: f64, g: f64, c: f64, v: f64, lambda: f64, m: u64, p0: f64, q0m: Option<f64>) -> Result<Self> {
        let q0m = q0m.unwrap_or(p0);
        let model = Self { a, g, c, v, lambda, m, p0, q0m };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.g, self.c, self.v, self.lambda, self.p0, self.q0m].iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("scalar model parameters must be finite"));
        }
        if self.g == 0.0 {
            return Err(Error::invalid("G must be nonzero"));
        }
        if self.c == 0.0 {
            return Err(Error::invalid("C must be nonzero"));
        }
        if self.v <= 0.0 {
            return Err(Error::invalid(format!("V must be positive, got {}", self.v)));
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.m < 2 {
            return Err(Error::invalid(format!("M must be at least 2, got {}", self.m)));
        }
        if self.p0 <= 0.0 || self.q0m <= 0.0 {
            return Err(Error::invalid("P0 and Q0M must be positive"));
        }
        Ok(())
    }

    pub fn with_m(mut self, m: u64) -> Self {
        self.m = m;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn inv_m(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// `G_M = G sqrt(1 - 1/M)`.
    pub fn g_m(&self) -> f64 {
        self.g * (1.0 - self.inv_m()).sqrt()
    }
}

/// `phi(P) = 1 - P C^2 (P C^2 + V)^{-1} = V / (P C^2 + V)`.
pub fn phi(p: f64, c: f64, v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::invalid(format!("V must be positive, got {v}")));
    }
    if !(p >= 0.0) {
        return Err(Error::invalid(format!("P must be nonnegative, got {p}")));
    }
    Ok(phi_unchecked(p, c, v))
}

#[inline]
fn phi_unchecked(p: f64, c: f64, v: f64) -> f64 {
    v / (p * c * c + v)
}

#[inline]
fn gain(p: f64, c: f64, v: f64) -> f64 {
    p * c / (p * c * c + v)
}

/// `|phi(P1) P1 - phi(P2) P2 - phi(P1) (P1 - P2) phi(P2)|`, which vanishes
/// identically for scalars.
pub fn phi_product_identity_residual(p1: f64, p2: f64, c: f64, v: f64) -> f64 {
    let f1 = phi_unchecked(p1, c, v);
    let f2 = phi_unchecked(p2, c, v);
    (f1 * p1 - f2 * p2 - f1 * (p1 - p2) * f2).abs()
}

/// Right-hand sides `(dP/dt, dQ/dt)` of the expected covariance ODEs.
pub fn expected_cov_rhs(model: &ScalarModel, p: f64, q: f64) -> (f64, f64) {
    let ScalarModel { a, g, c, v, lambda, .. } = *model;
    let g2 = g * g;
    let dp = (2.0 * a - lambda) * p + g2 + lambda * p * phi_unchecked(p, c, v);
    let k = gain(q, c, v);
    let dq = (2.0 * a - lambda) * q + g2 + lambda * q * phi_unchecked(q, c, v) - g2 * model.inv_m()
        + lambda * model.inv_m() * k * k * v;
    (dp, dq)
}

/// Sampled expectation trajectories. The mean columns are empty until
/// [`expected_mean_odes`] has been run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationTrajectory {
    pub grid: Vec<f64>,
    pub p_cal: Vec<f64>,
    pub q_cal: Vec<f64>,
    /// `Q - P`.
    pub e_cal: Vec<f64>,
    pub xhat_cal: Vec<f64>,
    pub shat_cal: Vec<f64>,
    /// `Xhat - Shat`.
    pub chi: Vec<f64>,
}

fn uniform_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be nonnegative, got {horizon}")));
    }
    let steps = ((horizon / dt) * (1.0 - 1e-12)).ceil() as usize;
    if steps == 0 {
        return Ok(vec![0.0]);
    }
    let h = horizon / steps as f64;
    Ok((0..=steps).map(|k| if k == steps { horizon } else { k as f64 * h }).collect())
}

/// Integrates both expected covariance ODEs with classical fixed-step RK4.
/// The step is `horizon / ceil(horizon / dt)`.
pub fn expected_cov_odes(model: &ScalarModel, horizon: f64, dt: f64) -> Result<ExpectationTrajectory> {
    model.validate()?;
    let grid = uniform_grid(horizon, dt)?;
    let mut p_cal = Vec::with_capacity(grid.len());
    let mut q_cal = Vec::with_capacity(grid.len());
    let (mut p, mut q) = (model.p0, model.q0m);
    p_cal.push(p);
    q_cal.push(q);
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let k1 = expected_cov_rhs(model, p, q);
        let k2 = expected_cov_rhs(model, p + 0.5 * h * k1.0, q + 0.5 * h * k1.1);
        let k3 = expected_cov_rhs(model, p + 0.5 * h * k2.0, q + 0.5 * h * k2.1);
        let k4 = expected_cov_rhs(model, p + h * k3.0, q + h * k3.1);
        p += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        q += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        p_cal.push(p);
        q_cal.push(q);
    }
    let e_cal = q_cal.iter().zip(&p_cal).map(|(q, p)| q - p).collect();
    Ok(ExpectationTrajectory { grid, p_cal, q_cal, e_cal, xhat_cal: vec![], shat_cal: vec![], chi: vec![] })
}

/// Expected optimal and empirical means,
/// `dX/dt = A X + lambda K (E[y] - C X)` and likewise for `S` with the
/// empirical gain, where `E[y_t] = C exp(At) x0_mean` and both start at
/// `x0_mean`. Returns `(Xhat, Shat, Xhat - Shat)`.
pub fn expected_mean_odes(
    model: &ScalarModel,
    p_cal: &[f64],
    q_cal: &[f64],
    x0_mean: f64,
    horizon: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    expected_mean_odes_from(model, p_cal, q_cal, x0_mean, (x0_mean, x0_mean), horizon, dt)
}

/// As [`expected_mean_odes`] with explicit initial values `(Xhat_0, Shat_0)`.
pub fn expected_mean_odes_from(
    model: &ScalarModel,
    p_cal: &[f64],
    q_cal: &[f64],
    x0_mean: f64,
    init: (f64, f64),
    horizon: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    model.validate()?;
    let grid = uniform_grid(horizon, dt)?;
    if p_cal.len() != grid.len() || q_cal.len() != grid.len() {
        return Err(Error::invalid(format!(
            "covariance trajectories have {} and {} points, grid has {}",
            p_cal.len(),
            q_cal.len(),
            grid.len()
        )));
    }
    let ScalarModel { a, c, v, lambda, .. } = *model;
    let ey = |t: f64| c * (a * t).exp() * x0_mean;
    let rhs = |t: f64, p: f64, q: f64, x: f64, s: f64| {
        let y = ey(t);
        (a * x + lambda * gain(p, c, v) * (y - c * x), a * s + lambda * gain(q, c, v) * (y - c * s))
    };
    let (mut x, mut s) = init;
    let mut xs = vec![x];
    let mut ss = vec![s];
    for i in 1..grid.len() {
        let (t0, h) = (grid[i - 1], grid[i] - grid[i - 1]);
        let (p0, p1, q0, q1) = (p_cal[i - 1], p_cal[i], q_cal[i - 1], q_cal[i]);
        let pm = cubic_midpoint(p_cal, i);
        let qm = cubic_midpoint(q_cal, i);
        let k1 = rhs(t0, p0, q0, x, s);
        let k2 = rhs(t0 + 0.5 * h, pm, qm, x + 0.5 * h * k1.0, s + 0.5 * h * k1.1);
        let k3 = rhs(t0 + 0.5 * h, pm, qm, x + 0.5 * h * k2.0, s + 0.5 * h * k2.1);
        let k4 = rhs(t0 + h, p1, q1, x + h * k3.0, s + h * k3.1);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        s += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        xs.push(x);
        ss.push(s);
    }
    let chi = xs.iter().zip(&ss).map(|(x, s)| x - s).collect();
    Ok((xs, ss, chi))
}

/// Value halfway between samples `i - 1` and `i` of a uniformly sampled
/// sequence, from the cubic through the four nearest samples.
fn cubic_midpoint(y: &[f64], i: usize) -> f64 {
    let n = y.len();
    if n < 4 {
        return 0.5 * (y[i - 1] + y[i]);
    }
    let w = |j: usize, c: [f64; 4]| c.iter().enumerate().map(|(k, c)| c * y[j + k]).sum::<f64>() / 16.0;
    if i == 1 {
        w(0, [5.0, 15.0, -5.0, 1.0])
    } else if i == n - 1 {
        w(n - 4, [1.0, -5.0, 15.0, 5.0])
    } else {
        w(i - 2, [-1.0, 9.0, 9.0, -1.0])
    }
}

/// Covariance and mean expectation trajectories on one grid.
pub fn expectation_trajectory(model: &ScalarModel, x0_mean: f64, horizon: f64, dt: f64) -> Result<ExpectationTrajectory> {
    let mut traj = expected_cov_odes(model, horizon, dt)?;
    let (x, s, chi) = expected_mean_odes(model, &traj.p_cal, &traj.q_cal, x0_mean, horizon, dt)?;
    traj.xhat_cal = x;
    traj.shat_cal = s;
    traj.chi = chi;
    Ok(traj)
}

fn require_rate_above_2a(model: &ScalarModel) -> Result<()> {
    if model.lambda > 0.0 && model.lambda > 2.0 * model.a {
        Ok(())
    } else {
        Err(Error::Infeasible(format!(
            "lambda={} must exceed max(0, 2A)={}",
            model.lambda,
            (2.0 * model.a).max(0.0)
        )))
    }
}

/// `max{ V^2 / (min{P0, Q0M} C^2 + V)^2, V^2 (lambda-2A)^2 / ((1-1/M) G^2 C^2 + V (lambda-2A))^2 }`.
pub fn gamma_bar(model: &ScalarModel) -> Result<f64> {
    model.validate()?;
    require_rate_above_2a(model)?;
    let ScalarModel { a, g, c, v, lambda, p0, q0m, .. } = *model;
    let c2 = c * c;
    let first = (v / (p0.min(q0m) * c2 + v)).powi(2);
    let lt = lambda - 2.0 * a;
    let second = (v * lt / ((1.0 - model.inv_m()) * g * g * c2 + v * lt)).powi(2);
    Ok(first.max(second))
}

/// Feasibility of the two sufficient inequalities on the sampling rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SufficientConditions {
    /// `2 V (lambda - 2A)(A V - G_M^2 C^2) < G_M^4 C^4`.
    pub rate_inequality: bool,
    /// `lambda > 2A / (1 - V^2 / (min{P0, Q0M} C^2 + V)^2)`.
    pub initial_inequality: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub model: ScalarModel,
    /// `None` when `lambda <= max(0, 2A)`.
    pub gamma_bar: Option<f64>,
    pub lambda_min: Option<f64>,
    /// `lambda > 2A` holds, so `gamma_bar` is meaningful.
    pub side_condition: bool,
    pub feasible: bool,
    /// `2(2A - lambda) + 2 lambda gamma_bar^2`; negative whenever feasible.
    pub decay_coefficient: Option<f64>,
    /// `None` means infeasible.
    pub ultimate_bound: Option<f64>,
    pub sufficient_conditions: SufficientConditions,
}

pub fn check_sampling_rate(model: &ScalarModel) -> TheoremReport {
    let ScalarModel { a, c, v, lambda, p0, q0m, .. } = *model;
    let gm2c2 = model.g_m().powi(2) * c * c;
    let rate_inequality = 2.0 * v * (lambda - 2.0 * a) * (a * v - gm2c2) < gm2c2 * gm2c2;
    let r = (v / (p0.min(q0m) * c * c + v)).powi(2);
    let initial_inequality = lambda > 2.0 * a / (1.0 - r);
    let sufficient_conditions = SufficientConditions { rate_inequality, initial_inequality };

    let gamma = gamma_bar(model).ok();
    let lambda_min = gamma.map(|gb| if a > 0.0 { 2.0 * a / (1.0 - gb * gb) } else { 0.0 });
    let feasible = matches!(lambda_min, Some(lm) if lambda > lm);
    let decay_coefficient = gamma.map(|gb| 2.0 * (2.0 * a - lambda) + 2.0 * lambda * gb * gb);
    let ultimate_bound = gamma.filter(|_| feasible).map(|gb| bound_formula(model, gb));
    TheoremReport {
        model: *model,
        gamma_bar: gamma,
        lambda_min,
        side_condition: lambda > 2.0 * a,
        feasible,
        decay_coefficient,
        ultimate_bound,
        sufficient_conditions,
    }
}

fn bound_formula(model: &ScalarModel, gb: f64) -> f64 {
    let ScalarModel { a, g, c, v, lambda, .. } = *model;
    (g * g + lambda * v / (c * c)) / (model.m as f64 * (lambda * (1.0 - gb * gb) - 2.0 * a))
}

/// `(G^2 + lambda V / C^2) / (M (lambda (1 - gamma_bar^2) - 2A))`.
pub fn ultimate_bound(model: &ScalarModel) -> Result<f64> {
    model.validate()?;
    let report = check_sampling_rate(model);
    report.ultimate_bound.ok_or_else(|| {
        Error::Infeasible(format!(
            "sampling rate lambda={} violates lambda > {}",
            model.lambda,
            report.lambda_min.map_or_else(|| format!("max(0, 2A)={}", (2.0 * model.a).max(0.0)), |l| l.to_string())
        ))
    })
}

/// `(min{P0, G^2/(lambda-2A)}, min{Q0M, G_M^2/(lambda-2A)})`.
pub fn covariance_lower_bounds(model: &ScalarModel) -> Result<(f64, f64)> {
    model.validate()?;
    require_rate_above_2a(model)?;
    let lt = model.lambda - 2.0 * model.a;
    Ok((model.p0.min(model.g * model.g / lt), model.q0m.min(model.g_m().powi(2) / lt)))
}

impl std::fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let yes = |b: bool| if b { "holds" } else { "fails" };
        let m = &self.model;
        writeln!(f, "model            A={} G={} C={} V={} lambda={} M={} P0={} Q0M={}", m.a, m.g, m.c, m.v, m.lambda, m.m, m.p0, m.q0m)?;
        writeln!(f, "lambda > 2A      {}", if self.side_condition { "yes" } else { "no" })?;
        writeln!(f, "gamma_bar        {}", opt(self.gamma_bar))?;
        writeln!(f, "lambda_min       {}", opt(self.lambda_min))?;
        writeln!(f, "feasible         {}", self.feasible)?;
        writeln!(f, "decay coeff      {}", opt(self.decay_coefficient))?;
        writeln!(
            f,
            "ultimate bound   {}",
            self.ultimate_bound.map_or_else(|| "infeasible".to_string(), |b| format!("{b:.6}"))
        )?;
        writeln!(f, "rate inequality  {}", yes(self.sufficient_conditions.rate_inequality))?;
        write!(f, "init inequality  {}", yes(self.sufficient_conditions.initial_inequality))
    }
}

impl TheoremReport {
    /// One-line JSON record; an infeasible bound is the string `"infeasible"`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if self.ultimate_bound.is_none() {
            v["ultimate_bound"] = serde_json::Value::String("infeasible".into());
        }
        v
    }
}
