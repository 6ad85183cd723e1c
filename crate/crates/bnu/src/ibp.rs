//! Two-parameter Indian Buffet Process prior over the binary activation
//! matrix: class log-probability, per-entry conditionals, new-feature
//! counts, and hyperparameter updates.
//!
//! Rows are features (endmembers), columns are bands. The infinite-limit
//! class probability of an activation matrix with K active rows is
//!
//! ```text
//! p([A] | alpha, beta) = (alpha*beta)^K / prod_h K_h!
//!                        * exp(-Kbar) * prod_k B(m_k, D - m_k + beta)
//! ```
//!
//! with `Kbar = alpha * sum_d beta / (beta + d - 1)` the expected number of
//! active rows and `K_h` the multiplicity of each distinct nonzero row
//! pattern.

use std::collections::HashMap;

use rand::Rng;

use crate::dist::{log_beta_fn, sample_gamma, sample_poisson};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Shape-rate parameters of a Gamma hyperprior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaHyper {
    pub shape: f64,
    pub rate: f64,
}

impl GammaHyper {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }
}

/// IBP concentration parameters together with their Gamma hyper-hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IbpParams {
    pub alpha_a: f64,
    pub beta_a: f64,
    pub h_alpha_a: GammaHyper,
    pub h_beta_a: GammaHyper,
}

impl IbpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_a > 0.0
            && self.beta_a > 0.0
            && self.h_alpha_a.shape > 0.0
            && self.h_alpha_a.rate > 0.0
            && self.h_beta_a.shape > 0.0
            && self.h_beta_a.rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "IBP parameters must be strictly positive: {self:?}"
            )))
        }
    }
}

/// Binary feature-by-band activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    rows: Vec<Vec<u8>>,
    bands: usize,
}

impl ActivationMatrix {
    pub fn new(rows: Vec<Vec<u8>>, bands: usize) -> Result<Self> {
        for row in &rows {
            if row.len() != bands {
                return Err(Error::Contract(format!(
                    "activation row has {} entries, expected {}",
                    row.len(),
                    bands
                )));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::Contract("activation entries must be 0 or 1".into()));
            }
        }
        Ok(Self { rows, bands })
    }

    pub fn empty(bands: usize) -> Self {
        Self {
            rows: Vec::new(),
            bands,
        }
    }

    /// All-ones matrix (used for the K=1 initialization).
    pub fn ones(k: usize, bands: usize) -> Self {
        Self {
            rows: vec![vec![1u8; bands]; k],
            bands,
        }
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn get(&self, k: usize, d: usize) -> u8 {
        self.rows[k][d]
    }

    pub fn set(&mut self, k: usize, d: usize, v: u8) {
        debug_assert!(v <= 1);
        self.rows[k][d] = v;
    }

    pub fn row(&self, k: usize) -> &[u8] {
        &self.rows[k]
    }

    /// Number of active bands in row `k`.
    pub fn row_sum(&self, k: usize) -> usize {
        self.rows[k].iter().map(|&v| v as usize).sum()
    }

    /// Number of active bands in row `k`, excluding band `d`.
    pub fn row_sum_excluding(&self, k: usize, d: usize) -> usize {
        self.row_sum(k) - self.rows[k][d] as usize
    }

    /// Append a feature active only at band `d`.
    pub fn push_singleton(&mut self, d: usize) {
        let mut row = vec![0u8; self.bands];
        row[d] = 1;
        self.rows.push(row);
    }

    pub fn push_row(&mut self, row: Vec<u8>) {
        debug_assert_eq!(row.len(), self.bands);
        self.rows.push(row);
    }

    pub fn remove_row(&mut self, k: usize) {
        self.rows.remove(k);
    }

    /// Remove all-zero rows; returns the removed indices in ascending order.
    pub fn remove_zero_rows(&mut self) -> Vec<usize> {
        let dead: Vec<usize> = (0..self.rows.len())
            .filter(|&k| self.rows[k].iter().all(|&v| v == 0))
            .collect();
        for &k in dead.iter().rev() {
            self.rows.remove(k);
        }
        dead
    }

    /// Element-wise OR of rows `i` and `j`, written into row `i`.
    pub fn or_rows(&mut self, i: usize, j: usize) {
        for d in 0..self.bands {
            self.rows[i][d] |= self.rows[j][d];
        }
    }
}

/// Expected number of active rows, `Kbar = alpha * sum_d beta/(beta+d-1)`.
pub fn expected_active_rows(alpha_a: f64, beta_a: f64, bands: usize) -> f64 {
    let s: f64 = (1..=bands).map(|d| beta_a / (beta_a + d as f64 - 1.0)).sum();
    alpha_a * s
}

/// Log class probability of `a` under the infinite-limit IBP. Rows that are
/// entirely zero are treated as inactive and ignored.
pub fn log_prob_activations(a: &ActivationMatrix, p: &IbpParams) -> Result<f64> {
    p.validate()?;
    let d = a.bands() as f64;
    let mut log_prob = -expected_active_rows(p.alpha_a, p.beta_a, a.bands());
    let mut pattern_counts: HashMap<&[u8], u64> = HashMap::new();
    for k in 0..a.k() {
        let m = a.row_sum(k);
        if m == 0 {
            continue;
        }
        log_prob += (p.alpha_a * p.beta_a).ln();
        log_prob += log_beta_fn(m as f64, d - m as f64 + p.beta_a)?;
        *pattern_counts.entry(a.row(k)).or_insert(0) += 1;
    }
    for &count in pattern_counts.values() {
        for i in 2..=count {
            log_prob -= (i as f64).ln();
        }
    }
    Ok(log_prob)
}

/// Prior probability that an entry is active given the rest of its row:
/// `m_excl / (D + beta_a - 1)`.
pub fn prior_prob_entry_active(m_excl: usize, bands: usize, beta_a: f64) -> f64 {
    m_excl as f64 / (bands as f64 + beta_a - 1.0)
}

/// Poisson rate for proposing new features at one band.
pub fn new_feature_rate(p: &IbpParams, bands: usize) -> f64 {
    p.alpha_a * p.beta_a / (p.beta_a + bands as f64 - 1.0)
}

/// Draw the number of new features for one band, `K+ ~ Poisson(rate)`.
pub fn sample_new_feature_count(p: &IbpParams, bands: usize, rng: &mut RngStream) -> Result<u64> {
    sample_poisson(new_feature_rate(p, bands), rng)
}

/// Gibbs update of `alpha_a`: Gamma(K + h1, sum_d beta/(beta+d-1) + h2).
pub fn sample_alpha_a(k: usize, p: &IbpParams, bands: usize, rng: &mut RngStream) -> Result<f64> {
    let shape = k as f64 + p.h_alpha_a.shape;
    let rate = expected_active_rows(1.0, p.beta_a, bands) + p.h_alpha_a.rate;
    sample_gamma(shape, rate, rng)
}

/// Metropolis update of `beta_a` with the hyperprior as independence
/// proposal; the prior terms cancel, leaving the class-probability ratio.
/// Returns the updated parameters and whether the proposal was accepted.
pub fn mh_step_beta_a(
    a: &ActivationMatrix,
    p: &IbpParams,
    rng: &mut RngStream,
) -> Result<(IbpParams, bool)> {
    let proposed_beta = sample_gamma(p.h_beta_a.shape, p.h_beta_a.rate, rng)?;
    let mut proposed = *p;
    proposed.beta_a = proposed_beta;
    let log_ratio = log_prob_activations(a, &proposed)? - log_prob_activations(a, p)?;
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        Ok((proposed, true))
    } else {
        Ok((*p, false))
    }
}

/// One prior-only Gibbs sweep over all bands: entry updates, Poisson new
/// features, and zero-row cleanup at the end of each band block. With no
/// likelihood this chain has the IBP as its stationary distribution.
pub fn prior_gibbs_sweep(
    a: &mut ActivationMatrix,
    p: &IbpParams,
    rng: &mut RngStream,
) -> Result<()> {
    let bands = a.bands();
    for d in 0..bands {
        for k in 0..a.k() {
            let prob = prior_prob_entry_active(a.row_sum_excluding(k, d), bands, p.beta_a);
            let v = if rng.random::<f64>() < prob { 1 } else { 0 };
            a.set(k, d, v);
        }
        let k_plus = sample_new_feature_count(p, bands, rng)?;
        for _ in 0..k_plus {
            a.push_singleton(d);
        }
        a.remove_zero_rows();
    }
    Ok(())
}
