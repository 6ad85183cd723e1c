//! Gibbs sampling of a multivariate Gaussian restricted to the probability
//! simplex.
//!
//! One call performs a single systematic scan: each of the K-1 free
//! coordinates is redrawn from its univariate conditional, truncated so that
//! every component and the implied redundant component stay in [0, 1]. The
//! caller rotates `pivot` (the redundant coordinate) between scans to avoid
//! a systematic bias toward a fixed component.

use ndarray::{Array1, Array2};

use crate::dist::sample_truncated_normal_interval;
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::rng::RngStream;

const SIMPLEX_TOL: f64 = 1e-9;
const COV_JITTER: f64 = 1e-10;

/// One Gibbs scan of `N(mean, covariance)` restricted to the simplex,
/// starting from `current` (which must lie on the simplex).
pub fn sample_simplex_gaussian(
    mean: &Array1<f64>,
    covariance: &Array2<f64>,
    current: &[f64],
    pivot: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let k = mean.len();
    if covariance.nrows() != k || covariance.ncols() != k || current.len() != k {
        return Err(Error::Contract(format!(
            "simplex sampler dimension mismatch: mean {}, covariance {}x{}, current {}",
            k,
            covariance.nrows(),
            covariance.ncols(),
            current.len()
        )));
    }
    let precision = cholesky_with_jitter(covariance, COV_JITTER)?.inverse();
    sample_simplex_gaussian_with_precision(mean, &precision, current, pivot, rng)
}

/// Same scan, parameterized by the precision matrix directly. The abundance
/// conditional naturally produces the precision, so this path avoids a
/// redundant inversion round trip.
pub(crate) fn sample_simplex_gaussian_with_precision(
    mean: &Array1<f64>,
    precision: &Array2<f64>,
    current: &[f64],
    pivot: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let k = mean.len();
    if k == 0 {
        return Err(Error::Contract("simplex sampler requires K >= 1".into()));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let sum: f64 = current.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || current.iter().any(|&x| x < -SIMPLEX_TOL) {
        return Err(Error::Contract(format!(
            "simplex sampler input off the simplex: sum {sum}, min {:?}",
            current.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }

    let r = pivot % k;
    let mut s = current.to_vec();
    for j in 0..k {
        if j == r {
            continue;
        }
        // Move the mass shared by coordinates j and r; everything else is
        // fixed, so s(t) = s0 + t * (e_j - e_r) with t in [0, m].
        let m = s[j] + s[r];
        s[r] += s[j];
        s[j] = 0.0;
        if m <= 0.0 {
            continue;
        }

        // Quadratic form along the move direction u = e_j - e_r.
        let mut q_uu = precision[(j, j)] + precision[(r, r)] - 2.0 * precision[(j, r)];
        if q_uu <= 0.0 {
            q_uu = f64::MIN_POSITIVE;
        }
        let mut q_ud = 0.0;
        for i in 0..k {
            q_ud += (precision[(j, i)] - precision[(r, i)]) * (s[i] - mean[i]);
        }
        let var = 1.0 / q_uu;
        let cond_mean = -q_ud * var;

        let t = sample_truncated_normal_interval(cond_mean, var, 0.0, m.min(1.0), rng)?;
        s[j] = t;
        s[r] = m - t;
    }

    let mut total = 0.0;
    for x in s.iter_mut() {
        if *x < 0.0 {
            debug_assert!(*x >= -1e-15);
            *x = 0.0;
        }
        total += *x;
    }
    for x in s.iter_mut() {
        *x /= total;
    }
    Ok(s)
}
