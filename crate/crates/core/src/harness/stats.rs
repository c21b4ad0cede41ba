//! Ordered running moments for per-time-point aggregation.

use nalgebra::{DMatrix, DVector};

/// Welford accumulator for one scalar per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl SeriesMoments {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, xs: &[f64]) {
        assert_eq!(xs.len(), self.mean.len(), "series length mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean; zero with fewer than two samples.
    pub fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m2| (m2 / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Mean and co-moment of the upper triangle of a symmetric matrix per
/// time point, for the trace norm of the mean and its delta-method error.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrixMoments {
    dim: usize,
    count: usize,
    mean: Vec<DVector<f64>>,
    comoment: Vec<DMatrix<f64>>,
}

fn upper_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn upper_triangle(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(upper_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

fn from_upper(n: usize, u: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = u[k];
            m[(j, i)] = u[k];
            k += 1;
        }
    }
    m
}

impl SymMatrixMoments {
    pub fn new(len: usize, dim: usize) -> Self {
        let q = upper_len(dim);
        Self { dim, count: 0, mean: vec![DVector::zeros(q); len], comoment: vec![DMatrix::zeros(q, q); len] }
    }

    /// One realization: upper triangles, one per time point.
    pub fn push(&mut self, xs: &[DVector<f64>]) {
        assert_eq!(xs.len(), self.mean.len(), "series length mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, c), x) in self.mean.iter_mut().zip(&mut self.comoment).zip(xs) {
            let d = x - &*m;
            *m += &d / n;
            let d2 = x - &*m;
            *c += &d * d2.transpose();
        }
    }

    /// Trace norm of the mean matrix at each time point and its standard
    /// error, from the gradient `U sign(L) U^T` of the nuclear norm.
    pub fn trace_norm(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count as f64;
        self.mean
            .iter()
            .zip(&self.comoment)
            .map(|(mu, com)| {
                let eig = from_upper(self.dim, mu).symmetric_eigen();
                let norm: f64 = eig.eigenvalues.iter().map(|l| l.abs()).sum();
                if self.count < 2 {
                    return (norm, 0.0);
                }
                let signs = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.signum()));
                let grad = &eig.eigenvectors * signs * eig.eigenvectors.transpose();
                // d tr(S D) / d upper(D): off-diagonal entries appear twice
                let w = upper_triangle(&(&grad * 2.0 - DMatrix::from_diagonal(&grad.diagonal())));
                let var = (w.transpose() * com * &w)[(0, 0)] / (n - 1.0);
                (norm, (var.max(0.0) / n).sqrt())
            })
            .unzip()
    }
}
