//! Small dense linear-algebra helpers shared by the simulators and filters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry above which a re-symmetrization is reported.
pub const SYMMETRY_DRIFT_TOL: f64 = 1e-12;

/// Exact transition `(Phi, Sigma)` of `dx = A x dt + G dw` over `dt`, where
/// `Phi = exp(A dt)` and `Sigma = int_0^dt exp(As) G G^T exp(A^T s) ds`.
///
/// Uses the block exponential of `[[-A, GG^T], [0, A^T]] dt`: the lower-right
/// block is `Phi^T` and `Phi` times the upper-right block is `Sigma`.
pub fn van_loan(a: &DMatrix<f64>, ggt: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 1 {
        return scalar_transition(a[(0, 0)], ggt[(0, 0)], dt);
    }
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a * dt));
    block.view_mut((0, n), (n, n)).copy_from(&(ggt * dt));
    block.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * dt));
    let e = block.exp();
    let phi = e.view((n, n), (n, n)).transpose();
    let mut sigma = &phi * e.view((0, n), (n, n));
    symmetrize(&mut sigma);
    (phi, sigma)
}

fn scalar_transition(a: f64, q: f64, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let phi = (a * dt).exp();
    // q * (exp(2a dt) - 1) / (2a), continuous at a = 0
    let x = 2.0 * a * dt;
    let var = if x.abs() < 1e-300 {
        q * dt
    } else {
        q * dt * x.exp_m1() / x
    };
    (
        DMatrix::from_element(1, 1, phi),
        DMatrix::from_element(1, 1, var),
    )
}

/// Averages `m` with its transpose and returns the relative drift that was
/// removed.
pub fn symmetrize(m: &mut DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut drift = 0.0_f64;
    let mut scale = 1.0_f64;
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (m[(i, j)], m[(j, i)]);
            drift = drift.max((x - y).abs());
            scale = scale.max(x.abs()).max(y.abs());
            let avg = 0.5 * (x + y);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    drift / scale
}

/// Symmetrizes a covariance and logs when the removed drift is not roundoff.
pub(crate) fn symmetrize_checked(m: &mut DMatrix<f64>, what: &str) {
    let drift = symmetrize(m);
    if drift > SYMMETRY_DRIFT_TOL {
        log::warn!("{what}: covariance asymmetry {drift:e} removed");
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut d = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            d = d.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    d
}

/// Lower-triangular square root `L` with `L L^T = S` of a symmetric PSD
/// matrix. Falls back to an eigenvalue square root (negative eigenvalues
/// clamped to zero) when `S` is singular.
pub fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    if s.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(s.nrows(), s.ncols());
    }
    if let Some(ch) = s.clone().cholesky() {
        return ch.unpack();
    }
    let eig = s.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// `K = P C^T (C P C^T + V)^{-1}` via a Cholesky solve of the innovation
/// covariance. `P` must be symmetric.
pub fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cp = c * p;
    let s = &cp * c.transpose() + v;
    let ch = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    // S K^T = C P
    Ok(ch.solve(&cp).transpose())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_asymmetry(m) <= tol
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigen().eigenvalues.min()
}

pub fn euclidean_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}
