//! Extended generator of jump diffusions
//! `dx = f(x) dt + g(x) dw + h(x, nu) dN_t` with Gaussian marks
//! `nu ~ N(0, V)`, and a Monte Carlo check of the Dynkin formula.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::rng::{RngStream, RoleTag};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type JumpMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Nodes per axis of the tensor Gauss-Hermite rule.
pub const HERMITE_NODES: usize = 24;
/// Mark dimensions above this use Monte Carlo for the jump integral.
pub const MAX_QUADRATURE_DIM: usize = 2;
pub const MC_FALLBACK_DRAWS: usize = 100_000;

#[derive(Clone)]
pub struct JumpDiffusionSpec {
    dim: usize,
    drift: VectorField,
    diffusion: MatrixField,
    jump: JumpMap,
    mark_cov: DMatrix<f64>,
    lambda: f64,
    rule: MarkRule,
}

#[derive(Clone)]
enum MarkRule {
    /// Marks are absent (`p = 0`); the jump map ignores its second argument.
    Deterministic,
    Quadrature { nodes: Vec<DVector<f64>>, weights: Vec<f64> },
    MonteCarlo { draws: Arc<Vec<DVector<f64>>> },
}

/// How the jump expectation was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpIntegration {
    NoJumps,
    Deterministic,
    GaussHermite { nodes_per_axis: usize },
    /// Mark dimension exceeded [`MAX_QUADRATURE_DIM`].
    MonteCarloFallback { draws: usize },
}

impl JumpDiffusionSpec {
    /// `mark_cov` is the covariance `V` of the marks; pass a `0 x 0` matrix
    /// for deterministic jumps.
    pub fn new(
        dim: usize,
        drift: VectorField,
        diffusion: MatrixField,
        jump: JumpMap,
        mark_cov: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        if !mark_cov.is_square() {
            return Err(Error::invalid("mark covariance must be square"));
        }
        let p = mark_cov.nrows();
        let rule = if p == 0 {
            MarkRule::Deterministic
        } else if p <= MAX_QUADRATURE_DIM {
            let (nodes, weights) = gaussian_rule(&mark_cov, HERMITE_NODES);
            MarkRule::Quadrature { nodes, weights }
        } else {
            log::warn!("mark dimension {p} > {MAX_QUADRATURE_DIM}: jump integral uses {MC_FALLBACK_DRAWS} Monte Carlo draws");
            let sqrt = psd_sqrt(&mark_cov);
            let mut rng = RngStream::new(0, 0, RoleTag::Quadrature);
            let draws = (0..MC_FALLBACK_DRAWS)
                .map(|_| {
                    let mut xi = DVector::zeros(p);
                    rng.fill_standard_normal(xi.as_mut_slice());
                    &sqrt * xi
                })
                .collect();
            MarkRule::MonteCarlo { draws: Arc::new(draws) }
        };
        Ok(Self { dim, drift, diffusion, jump, mark_cov, lambda, rule })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mark_cov(&self) -> &DMatrix<f64> {
        &self.mark_cov
    }

    fn jump_integration(&self) -> JumpIntegration {
        if self.lambda == 0.0 {
            return JumpIntegration::NoJumps;
        }
        match &self.rule {
            MarkRule::Deterministic => JumpIntegration::Deterministic,
            MarkRule::Quadrature { .. } => JumpIntegration::GaussHermite { nodes_per_axis: HERMITE_NODES },
            MarkRule::MonteCarlo { draws } => JumpIntegration::MonteCarloFallback { draws: draws.len() },
        }
    }

    /// `int psi(z + h(z, nu)) mu(d nu)`.
    fn jump_expectation(&self, psi: &TestFunction, z: &DVector<f64>) -> f64 {
        match &self.rule {
            MarkRule::Deterministic => (psi.eval)(&(z + (self.jump)(z, &DVector::zeros(0)))),
            MarkRule::Quadrature { nodes, weights } => nodes
                .iter()
                .zip(weights)
                .map(|(nu, w)| w * (psi.eval)(&(z + (self.jump)(z, nu))))
                .sum(),
            MarkRule::MonteCarlo { draws } => {
                draws.iter().map(|nu| (psi.eval)(&(z + (self.jump)(z, nu)))).sum::<f64>() / draws.len() as f64
            }
        }
    }

    fn draw_mark(&self, rng: &mut RngStream, sqrt: &DMatrix<f64>) -> DVector<f64> {
        let mut xi = DVector::zeros(self.mark_cov.nrows());
        rng.fill_standard_normal(xi.as_mut_slice());
        sqrt * xi
    }
}

/// Tensor Gauss-Hermite rule for `N(0, cov)`, `cov` of size 1 or 2.
fn gaussian_rule(cov: &DMatrix<f64>, n: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let (x1, w1) = hermite_rule(n);
    let sqrt = psd_sqrt(cov);
    let p = cov.nrows();
    let scale = std::f64::consts::SQRT_2;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut idx = vec![0usize; p];
    loop {
        let xi = DVector::from_iterator(p, idx.iter().map(|&i| scale * x1[i]));
        nodes.push(&sqrt * xi);
        weights.push(idx.iter().map(|&i| w1[i]).product());
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == p {
                return (nodes, weights);
            }
        }
    }
}

/// Golub-Welsch nodes of the physicists' Hermite rule with weights
/// normalized to sum to one (so `sum w_i f(sqrt(2) x_i) = E f(xi)`).
pub fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// A twice-differentiable test function with its gradient and Hessian.
#[derive(Clone)]
pub struct TestFunction {
    pub eval: ScalarField,
    pub gradient: VectorField,
    pub hessian: MatrixField,
}

impl TestFunction {
    pub fn new(eval: ScalarField, gradient: VectorField, hessian: MatrixField) -> Self {
        Self { eval, gradient, hessian }
    }

    /// `sum_k coeffs[k] x_i^k` in coordinate `i` of an `n`-dimensional state.
    pub fn coordinate_polynomial(n: usize, i: usize, coeffs: Vec<f64>) -> Self {
        let c = Arc::new(coeffs);
        let (c1, c2, c3) = (c.clone(), c.clone(), c);
        Self {
            eval: Arc::new(move |x| c1.iter().enumerate().map(|(k, a)| a * x[i].powi(k as i32)).sum()),
            gradient: Arc::new(move |x| {
                let d: f64 = c2.iter().enumerate().skip(1).map(|(k, a)| a * k as f64 * x[i].powi(k as i32 - 1)).sum();
                let mut g = DVector::zeros(n);
                g[i] = d;
                g
            }),
            hessian: Arc::new(move |x| {
                let d: f64 = c3
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, a)| a * (k * (k - 1)) as f64 * x[i].powi(k as i32 - 2))
                    .sum();
                let mut h = DMatrix::zeros(n, n);
                h[(i, i)] = d;
                h
            }),
        }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self::coordinate_polynomial(n, 0, vec![value])
    }

    /// `a f + b g`.
    pub fn combine(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        let (fg, gg) = (f.gradient.clone(), g.gradient.clone());
        let (fh, gh) = (f.hessian.clone(), g.hessian.clone());
        Self {
            eval: Arc::new(move |x| a * fe(x) + b * ge(x)),
            gradient: Arc::new(move |x| fg(x) * a + gg(x) * b),
            hessian: Arc::new(move |x| fh(x) * a + gh(x) * b),
        }
    }

    /// Largest relative deviation of gradient and Hessian from central
    /// finite differences over `points`.
    pub fn derivative_mismatch(&self, points: &[DVector<f64>]) -> f64 {
        let mut worst = 0.0_f64;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        for x in points {
            let n = x.len();
            let g = (self.gradient)(x);
            let h = (self.hessian)(x);
            for i in 0..n {
                let step = 1e-5 * x[i].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = ((self.eval)(&xp) - (self.eval)(&xm)) / (2.0 * step);
                worst = worst.max(rel(fd, g[i]));
                let gp = (self.gradient)(&xp);
                let gm = (self.gradient)(&xm);
                for j in 0..n {
                    worst = worst.max(rel((gp[j] - gm[j]) / (2.0 * step), h[(j, i)]));
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorEval {
    pub value: f64,
    pub jump_integration: JumpIntegration,
}

/// `L psi(z) = <grad psi, f> + tr(hess psi g g^T)/2 + lambda (E psi(z + h(z, nu)) - psi(z))`.
pub fn generator_apply(spec: &JumpDiffusionSpec, psi: &TestFunction, z: &DVector<f64>) -> GeneratorEval {
    let f = (spec.drift)(z);
    let g = (spec.diffusion)(z);
    GeneratorEval { value: generator_with(spec, psi, z, &f, &g), jump_integration: spec.jump_integration() }
}

/// Generator value given the drift `f` and diffusion `g` already evaluated at `z`.
fn generator_with(spec: &JumpDiffusionSpec, psi: &TestFunction, z: &DVector<f64>, f: &DVector<f64>, g: &DMatrix<f64>) -> f64 {
    let drift = (psi.gradient)(z).dot(f);
    // tr(H g g^T) = sum over entries of (H g) .* g
    let diffusion = 0.5 * ((psi.hessian)(z) * g).component_mul(g).sum();
    let jump = if spec.lambda == 0.0 {
        0.0
    } else {
        spec.lambda * (spec.jump_expectation(psi, z) - (psi.eval)(z))
    };
    drift + diffusion + jump
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynkinOptions {
    pub horizon: f64,
    pub n_paths: usize,
    /// Euler-Maruyama step.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynkinReport {
    /// Direct estimate of `E psi(x_T)`.
    pub mc_estimate: f64,
    /// `psi(x_0) + E int_0^T L psi(x_s) ds`.
    pub dynkin_estimate: f64,
    /// Pooled standard error `sqrt(se_direct^2 + se_dynkin^2)`.
    pub mc_stderr: f64,
    pub direct_stderr: f64,
    pub dynkin_stderr: f64,
}

impl DynkinReport {
    /// Distance between the two estimates in pooled standard errors.
    pub fn discrepancy(&self) -> f64 {
        let d = (self.mc_estimate - self.dynkin_estimate).abs();
        if d == 0.0 { 0.0 } else { d / self.mc_stderr }
    }
}

const DIVERGENCE_LIMIT: f64 = 1e12;

/// Simulates `n_paths` Euler-Maruyama paths with exponential jump clocks
/// and compares the direct and Dynkin estimates of `E psi(x_T)`. Path `k`
/// uses streams `(seed, k)`; the reduction runs in path order.
pub fn dynkin_check(
    spec: &JumpDiffusionSpec,
    psi: &TestFunction,
    x0: &DVector<f64>,
    options: DynkinOptions,
    seed: u64,
) -> Result<DynkinReport> {
    if options.n_paths < 100 {
        return Err(Error::invalid(format!("dynkin_check needs at least 100 paths, got {}", options.n_paths)));
    }
    if x0.len() != spec.dim {
        return Err(Error::invalid("x0 dimension does not match the jump diffusion"));
    }
    if !(options.dt > 0.0 && options.horizon >= 0.0) {
        return Err(Error::invalid("dt must be positive and horizon nonnegative"));
    }
    let mark_sqrt = psd_sqrt(&spec.mark_cov);
    let paths: Vec<Result<(f64, f64)>> = (0..options.n_paths)
        .into_par_iter()
        .map(|k| simulate_path(spec, psi, x0, options, seed, k as u32, &mark_sqrt))
        .collect();
    let mut direct = Vec::with_capacity(paths.len());
    let mut integral = Vec::with_capacity(paths.len());
    for p in paths {
        let (d, i) = p?;
        direct.push(d);
        integral.push(i);
    }
    let (md, sd) = mean_stderr(&direct);
    let (mi, si) = mean_stderr(&integral);
    Ok(DynkinReport {
        mc_estimate: md,
        dynkin_estimate: (psi.eval)(x0) + mi,
        mc_stderr: (sd * sd + si * si).sqrt(),
        direct_stderr: sd,
        dynkin_stderr: si,
    })
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn simulate_path(
    spec: &JumpDiffusionSpec,
    psi: &TestFunction,
    x0: &DVector<f64>,
    options: DynkinOptions,
    seed: u64,
    k: u32,
    mark_sqrt: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let mut noise = RngStream::new(seed, k, RoleTag::StateNoise);
    let mut clock = noise.sibling(RoleTag::Clock);
    let mut marks = noise.sibling(RoleTag::MeasurementNoise);
    let horizon = options.horizon;
    let mut next_jump = if spec.lambda > 0.0 { clock.exponential(spec.lambda) } else { f64::INFINITY };
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut integral = 0.0;
    let mut f = (spec.drift)(&x);
    let mut g = (spec.diffusion)(&x);
    let mut l_prev = generator_with(spec, psi, &x, &f, &g);
    let mut xi = DVector::zeros(g.ncols());
    while t < horizon {
        let h = options.dt.min(horizon - t).min(next_jump - t).max(0.0);
        if h > 0.0 {
            noise.fill_standard_normal(xi.as_mut_slice());
            x += &f * h + &g * &xi * h.sqrt();
            t += h;
            f = (spec.drift)(&x);
            g = (spec.diffusion)(&x);
            let l_now = generator_with(spec, psi, &x, &f, &g);
            integral += 0.5 * h * (l_prev + l_now);
            l_prev = l_now;
        }
        if t >= next_jump && next_jump <= horizon {
            let nu = spec.draw_mark(&mut marks, mark_sqrt);
            x += (spec.jump)(&x, &nu);
            f = (spec.drift)(&x);
            g = (spec.diffusion)(&x);
            l_prev = generator_with(spec, psi, &x, &f, &g);
            next_jump += clock.exponential(spec.lambda);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Numerical(format!("path {k} diverged at t={t}")));
        }
        if horizon - t < 1e-14 * horizon.max(1.0) {
            break;
        }
    }
    Ok(((psi.eval)(&x), integral))
}

/// Scalar OU `dx = A x dt + G dw` without jumps.
pub fn ou_spec(a: f64, g: f64) -> JumpDiffusionSpec {
    JumpDiffusionSpec::new(
        1,
        Arc::new(move |x| x * a),
        Arc::new(move |_| DMatrix::from_element(1, 1, g)),
        Arc::new(|x, _| DVector::zeros(x.len())),
        DMatrix::zeros(0, 0),
        0.0,
    )
    .expect("valid OU spec")
}

/// The scalar jump Riccati equation as a piecewise-deterministic process:
/// flow `2AP + G^2`, jump `-P^2 C^2 / (P C^2 + V)` at rate `lambda`.
pub fn jump_riccati_spec(a: f64, g: f64, c: f64, v: f64, lambda: f64) -> Result<JumpDiffusionSpec> {
    JumpDiffusionSpec::new(
        1,
        Arc::new(move |p| DVector::from_element(1, 2.0 * a * p[0] + g * g)),
        Arc::new(|_| DMatrix::zeros(1, 1)),
        Arc::new(move |p, _| DVector::from_element(1, -p[0] * p[0] * c * c / (p[0] * c * c + v))),
        DMatrix::zeros(0, 0),
        lambda,
    )
}
