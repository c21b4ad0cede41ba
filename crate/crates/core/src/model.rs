use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, is_symmetric};

/// Linear diffusion `dx = A x dt + G dw` observed as `y = C x + nu`,
/// `nu ~ N(0, V)`, at Poisson sampling times, with prior `x_0 ~ N(x0_mean, x0_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    v: DMatrix<f64>,
    x0_mean: DVector<f64>,
    x0_cov: DMatrix<f64>,
    derived: Derived,
}

#[derive(Debug, Clone, PartialEq)]
struct Derived {
    ggt: DMatrix<f64>,
    v_sqrt: DMatrix<f64>,
    x0_sqrt: DMatrix<f64>,
}

const SYM_TOL: f64 = 1e-12;

impl LinearGaussianModel {
    pub fn new(
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        v: DMatrix<f64>,
        x0_mean: DVector<f64>,
        x0_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::invalid(format!("A must be square and nonempty, got {}x{}", a.nrows(), a.ncols())));
        }
        if g.nrows() != n || g.ncols() == 0 {
            return Err(Error::invalid(format!("G must be {n}xm, got {}x{}", g.nrows(), g.ncols())));
        }
        let p = c.nrows();
        if c.ncols() != n || p == 0 {
            return Err(Error::invalid(format!("C must be px{n}, got {}x{}", c.nrows(), c.ncols())));
        }
        if v.nrows() != p || v.ncols() != p {
            return Err(Error::invalid(format!("V must be {p}x{p}, got {}x{}", v.nrows(), v.ncols())));
        }
        if x0_mean.len() != n {
            return Err(Error::invalid(format!("x0_mean must have length {n}, got {}", x0_mean.len())));
        }
        if x0_cov.nrows() != n || x0_cov.ncols() != n {
            return Err(Error::invalid(format!("x0_cov must be {n}x{n}")));
        }
        let all = a.iter().chain(g.iter()).chain(c.iter()).chain(v.iter()).chain(x0_mean.iter()).chain(x0_cov.iter());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("model entries must be finite"));
        }
        if !is_symmetric(&v, SYM_TOL) {
            return Err(Error::invalid("V must be symmetric"));
        }
        let v_chol = v
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("V must be positive definite"))?;
        if !is_symmetric(&x0_cov, SYM_TOL) {
            return Err(Error::invalid("x0_cov must be symmetric"));
        }
        if linalg::min_eigenvalue(&x0_cov) < -1e-12 * x0_cov.amax().max(1.0) {
            return Err(Error::invalid("x0_cov must be positive semidefinite"));
        }
        let derived = Derived {
            ggt: &g * g.transpose(),
            v_sqrt: v_chol.unpack(),
            x0_sqrt: linalg::psd_sqrt(&x0_cov),
        };
        Ok(Self { a, g, c, v, x0_mean, x0_cov, derived })
    }

    /// One-dimensional state and observation.
    pub fn scalar(a: f64, g: f64, c: f64, v: f64, x0_mean: f64, p0: f64) -> Result<Self> {
        let m = |x| DMatrix::from_element(1, 1, x);
        Self::new(m(a), m(g), m(c), m(v), DVector::from_element(1, x0_mean), m(p0))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn x0_cov(&self) -> &DMatrix<f64> {
        &self.x0_cov
    }

    pub fn ggt(&self) -> &DMatrix<f64> {
        &self.derived.ggt
    }

    /// Cholesky factor of `V`.
    pub fn v_sqrt(&self) -> &DMatrix<f64> {
        &self.derived.v_sqrt
    }

    pub fn x0_sqrt(&self) -> &DMatrix<f64> {
        &self.derived.x0_sqrt
    }

    /// Rank test of `[G, AG, ..., A^{n-1} G]`. Not enforced anywhere.
    pub fn is_controllable(&self) -> bool {
        let n = self.state_dim();
        let m = self.noise_dim();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.g.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        let scale = ctrb.amax().max(1.0);
        ctrb.rank(1e-10 * scale) == n
    }
}
