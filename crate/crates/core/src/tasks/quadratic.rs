use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::{dot, DenseVector};

/// `f(x) = 0.5 x'Ax + b'x + c` with `A` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct QuadraticPayload {
    n: usize,
    /// Row-major `n x n`.
    a: Vec<f64>,
    b: Vec<f64>,
    offset: f64,
}

impl QuadraticPayload {
    pub fn new(a: Vec<f64>, b: DenseVector, offset: f64) -> Result<Self> {
        let n = b.len();
        ensure_len(n * n, a.len())?;
        for i in 0..n {
            for j in 0..i {
                if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if a.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::NonFinite("quadratic payload".into()));
        }
        Ok(Self {
            n,
            a,
            b: b.into_vec(),
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn ax(&self, x: &[f64]) -> Vec<f64> {
        self.a.chunks(self.n).map(|row| dot(row, x)).collect()
    }

    pub fn value_grad(&self, x: &DenseVector) -> (f64, DenseVector) {
        let ax = self.ax(x);
        let f = 0.5 * dot(&ax, x) + dot(&self.b, x) + self.offset;
        let g = ax.iter().zip(&self.b).map(|(p, q)| p + q).collect();
        (f, DenseVector::from_raw(g))
    }

    pub fn value(&self, x: &DenseVector) -> f64 {
        self.value_grad(x).0
    }

    /// Solves `A x = -b` by Cholesky. Fails when `A` is not positive definite.
    pub fn minimizer(&self) -> Result<DenseVector> {
        let chol = DMatrix::from_row_slice(self.n, self.n, &self.a)
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("matrix is not positive definite".into()))?;
        let x = chol.solve(&DVector::from_iterator(self.n, self.b.iter().map(|v| -v)));
        DenseVector::new(x.iter().copied().collect())
    }

    /// Minimum value `c - 0.5 b'A^{-1}b`.
    pub fn min_value(&self) -> Result<f64> {
        let x = self.minimizer()?;
        Ok(self.value(&x))
    }
}
