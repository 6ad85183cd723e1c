//! Figures of merit: matched endmember/abundance angular errors, spectral
//! information divergence, RMSE aggregation over Monte Carlo runs, and
//! dimensionality-estimation scores.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Floor applied to normalized spectra before logarithms in the SID.
const SID_FLOOR: f64 = 1e-12;

/// An optimal one-to-one matching between estimated and true endmembers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matching {
    /// `(estimated index, true index)` pairs, `min(K_est, K_true)` of them.
    pub pairs: Vec<(usize, usize)>,
    /// Estimated endmembers without a partner (surplus).
    pub unmatched_est: Vec<usize>,
    /// True endmembers without a partner (deficit).
    pub unmatched_true: Vec<usize>,
}

/// Evaluation summary for one run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub theta_f: f64,
    pub theta_s: f64,
    pub mean_sid: f64,
    pub matching: Matching,
    pub k_true: usize,
    pub k_est: usize,
}

/// Angle in degrees between two vectors; zero-norm vectors count as
/// orthogonal.
fn angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-300 || nb < 1e-300 {
        return 90.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Hungarian algorithm (potentials formulation) for a rectangular cost
/// matrix with `rows <= cols`; returns for each row its assigned column.
fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-indexed potentials over rows (u) and columns (v).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // column -> row (1-indexed)
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exhaustive optimal assignment over all injections (small instances).
fn exhaustive_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    let mut best = (f64::INFINITY, Vec::new());
    let mut chosen = vec![usize::MAX; n];
    let mut used = vec![false; m];
    fn recurse(
        cost: &Array2<f64>,
        row: usize,
        acc: f64,
        chosen: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best: &mut (f64, Vec<usize>),
    ) {
        let n = cost.nrows();
        if acc >= best.0 {
            return;
        }
        if row == n {
            *best = (acc, chosen.clone());
            return;
        }
        for j in 0..cost.ncols() {
            if used[j] {
                continue;
            }
            used[j] = true;
            chosen[row] = j;
            recurse(cost, row + 1, acc + cost[(row, j)], chosen, used, best);
            used[j] = false;
        }
    }
    recurse(cost, 0, 0.0, &mut chosen, &mut used, &mut best);
    best.1
}

/// Optimal one-to-one matching between estimated and true endmember rows,
/// minimizing the total pairwise angle. Exhaustive search on small
/// instances, Hungarian assignment above that; surplus endmembers on either
/// side are reported unmatched.
pub fn match_endmembers(f_est: &Array2<f64>, f_true: &Array2<f64>) -> Result<Matching> {
    let k_est = f_est.nrows();
    let k_true = f_true.nrows();
    if k_est == 0 || k_true == 0 {
        return Ok(Matching {
            pairs: Vec::new(),
            unmatched_est: (0..k_est).collect(),
            unmatched_true: (0..k_true).collect(),
        });
    }
    if f_est.ncols() != f_true.ncols() {
        return Err(Error::Contract(format!(
            "band mismatch: estimated {} vs true {}",
            f_est.ncols(),
            f_true.ncols()
        )));
    }
    // Orient so rows <= cols.
    let est_is_rows = k_est <= k_true;
    let (rows, cols) = if est_is_rows {
        (k_est, k_true)
    } else {
        (k_true, k_est)
    };
    let cost = Array2::from_shape_fn((rows, cols), |(i, j)| {
        let (ei, ti) = if est_is_rows { (i, j) } else { (j, i) };
        let e: Vec<f64> = f_est.row(ei).to_vec();
        let t: Vec<f64> = f_true.row(ti).to_vec();
        angle_degrees(&e, &t)
    });
    let assignment = if rows <= 8 && cols <= 8 {
        exhaustive_assignment(&cost)
    } else {
        hungarian(&cost)
    };
    let mut pairs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| if est_is_rows { (i, j) } else { (j, i) })
        .collect();
    pairs.sort();
    let unmatched_est = (0..k_est)
        .filter(|e| !pairs.iter().any(|(pe, _)| pe == e))
        .collect();
    let unmatched_true = (0..k_true)
        .filter(|t| !pairs.iter().any(|(_, pt)| pt == t))
        .collect();
    Ok(Matching {
        pairs,
        unmatched_est,
        unmatched_true,
    })
}

/// Mean angle (degrees) between matched endmember rows.
pub fn mean_angle_endmembers(
    f_est: &Array2<f64>,
    f_true: &Array2<f64>,
    matching: &Matching,
) -> Result<f64> {
    if matching.pairs.is_empty() {
        return Err(Error::Contract("empty matching".into()));
    }
    let mut total = 0.0;
    for &(e, t) in &matching.pairs {
        let ev: Vec<f64> = f_est.row(e).to_vec();
        let tv: Vec<f64> = f_true.row(t).to_vec();
        total += angle_degrees(&ev, &tv);
    }
    Ok(total / matching.pairs.len() as f64)
}

/// Mean angle (degrees) between matched abundance columns.
pub fn mean_angle_abundances(
    s_est: &Array2<f64>,
    s_true: &Array2<f64>,
    matching: &Matching,
) -> Result<f64> {
    if matching.pairs.is_empty() {
        return Err(Error::Contract("empty matching".into()));
    }
    if s_est.nrows() != s_true.nrows() {
        return Err(Error::Contract(format!(
            "pixel mismatch: estimated {} vs true {}",
            s_est.nrows(),
            s_true.nrows()
        )));
    }
    let mut total = 0.0;
    for &(e, t) in &matching.pairs {
        let ev: Vec<f64> = s_est.column(e).to_vec();
        let tv: Vec<f64> = s_true.column(t).to_vec();
        total += angle_degrees(&ev, &tv);
    }
    Ok(total / matching.pairs.len() as f64)
}

/// Symmetric KL divergence between two L1-normalized spectra, entries
/// floored before the logarithms.
fn sid(p_raw: &[f64], q_raw: &[f64]) -> f64 {
    let sp: f64 = p_raw.iter().sum();
    let sq: f64 = q_raw.iter().sum();
    let mut total = 0.0;
    for (p0, q0) in p_raw.iter().zip(q_raw.iter()) {
        let p = (p0 / sp).max(SID_FLOOR);
        let q = (q0 / sq).max(SID_FLOOR);
        total += p * (p / q).ln() + q * (q / p).ln();
    }
    total
}

/// Mean spectral information divergence over matched endmember pairs.
pub fn mean_sid(f_est: &Array2<f64>, f_true: &Array2<f64>, matching: &Matching) -> Result<f64> {
    if matching.pairs.is_empty() {
        return Err(Error::Contract("empty matching".into()));
    }
    let mut total = 0.0;
    for &(e, t) in &matching.pairs {
        let ev: Vec<f64> = f_est.row(e).to_vec();
        let tv: Vec<f64> = f_true.row(t).to_vec();
        total += sid(&tv, &ev);
    }
    Ok(total / matching.pairs.len() as f64)
}

/// Root mean square over per-run scalar measures.
pub fn rmse_over_runs(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("rmse of an empty run list".into()));
    }
    let ms = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    Ok(ms.sqrt())
}

/// Fraction of runs with the correct endmember count, and the RMSE of the
/// count estimate.
pub fn dimensionality_scores(k_estimates: &[usize], k_true: usize) -> Result<(f64, f64)> {
    if k_estimates.is_empty() {
        return Err(Error::Contract(
            "dimensionality scores of an empty run list".into(),
        ));
    }
    let n = k_estimates.len() as f64;
    let correct = k_estimates.iter().filter(|&&k| k == k_true).count() as f64;
    let mse = k_estimates
        .iter()
        .map(|&k| {
            let d = k as f64 - k_true as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok((correct / n, mse.sqrt()))
}

/// Full evaluation of one run against ground truth: matching on the
/// endmember angles, then all three measures on that single matching.
pub fn evaluate(
    f_est: &Array2<f64>,
    s_est: &Array2<f64>,
    f_true: &Array2<f64>,
    s_true: &Array2<f64>,
) -> Result<EvalReport> {
    let matching = match_endmembers(f_est, f_true)?;
    let (theta_f, theta_s, mean_sid_v) = if matching.pairs.is_empty() {
        (90.0, 90.0, f64::INFINITY)
    } else {
        (
            mean_angle_endmembers(f_est, f_true, &matching)?,
            mean_angle_abundances(s_est, s_true, &matching)?,
            mean_sid(f_est, f_true, &matching)?,
        )
    };
    Ok(EvalReport {
        theta_f,
        theta_s,
        mean_sid: mean_sid_v,
        matching,
        k_true: f_true.nrows(),
        k_est: f_est.nrows(),
    })
}
