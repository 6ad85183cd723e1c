//! Dense Cholesky helpers for the small SPD systems (K x K, K at most a
//! few dozen) that appear in the abundance and simplex conditionals.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    pub(crate) fn new(m: &Array2<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Contract(format!(
                "cholesky requires a square matrix, got {}x{}",
                n,
                m.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut sum = m[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::Contract(format!(
                            "matrix is not positive definite (pivot {sum} at {i})"
                        )));
                    }
                    l[(i, j)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    /// Solve `M x = b`.
    pub(crate) fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                let t = y[k];
                y[i] -= self.l[(i, k)] * t;
            }
            y[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = y[k];
                y[i] -= self.l[(k, i)] * t;
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    /// Dense inverse of the factored matrix.
    pub(crate) fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut inv = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::<f64>::zeros(n);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Jittered Cholesky: adds `scale * trace/n` to the diagonal, escalating a
/// few times if the factorization still fails.
pub(crate) fn cholesky_with_jitter(m: &Array2<f64>, scale: f64) -> Result<Cholesky> {
    let n = m.nrows();
    let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let base = scale * trace.abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut jitter = base;
    for _ in 0..8 {
        let mut jm = m.clone();
        for i in 0..n {
            jm[(i, i)] += jitter;
        }
        if let Ok(c) = Cholesky::new(&jm) {
            return Ok(c);
        }
        jitter *= 100.0;
    }
    Err(Error::Contract(
        "matrix is numerically singular even after jitter".into(),
    ))
}
