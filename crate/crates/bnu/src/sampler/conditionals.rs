//! Gibbs conditionals for the noise variance, the noise hyperparameters,
//! the abundance rows, and the endmember weight rows.
//!
//! Tempering divides the likelihood's residual quadratic term by the chain
//! temperature wherever it appears: the sigma^2 scale, the abundance
//! precision, and the weight-row likelihood precision.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::Distribution;

use crate::dist::{
    ln_gamma_pdf, ln_inv_gamma_pdf, sample_inverse_gamma, sample_truncated_normal,
    TruncatedNormalSpec,
};
use crate::error::{Error, Result};
use crate::ibp::GammaHyper;
use crate::linalg::cholesky_with_jitter;
use crate::model::{ModelState, ObservedImage};
use crate::rng::RngStream;
use crate::simplex::sample_simplex_gaussian_with_precision;

/// Random-walk standard deviation for the noise hyperparameter proposals.
const NOISE_HYPER_RW_STD: f64 = 0.1;

/// Jitter scale for the abundance Gram matrix `sum_d f_d f_d^T`.
const GRAM_JITTER: f64 = 1e-8;

/// Residual sum of squares of `Z - S F`.
pub(crate) fn residual_sum_of_squares(image: &ObservedImage, state: &ModelState) -> f64 {
    let recon = state.s.dot(&state.endmembers());
    image
        .z
        .iter()
        .zip(recon.iter())
        .map(|(z, r)| (z - r) * (z - r))
        .sum()
}

/// Shape and scale of the Inverse-Gamma conditional for `sigma_z^2`.
pub fn sigma2_conditional_params(
    image: &ObservedImage,
    state: &ModelState,
    temperature: f64,
) -> Result<(f64, f64)> {
    if state.bands() != image.bands() || state.pixels() != image.pixels() {
        return Err(Error::Contract(
            "sigma2 conditional dimension mismatch".into(),
        ));
    }
    let nd = (image.pixels() * image.bands()) as f64;
    let rss = residual_sum_of_squares(image, state);
    Ok((
        state.alpha_sigma + nd / 2.0,
        state.beta_sigma + rss / (2.0 * temperature),
    ))
}

/// Draw `sigma_z^2` from its tempered conditional.
pub fn sample_sigma2(
    image: &ObservedImage,
    state: &ModelState,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let (shape, scale) = sigma2_conditional_params(image, state, temperature)?;
    sample_inverse_gamma(shape, scale, rng)
}

pub(crate) fn sample_sigma2_from_rss(
    state: &ModelState,
    nd: f64,
    rss: f64,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    sample_inverse_gamma(
        state.alpha_sigma + nd / 2.0,
        state.beta_sigma + rss / (2.0 * temperature),
        rng,
    )
}

/// Unnormalized log conditional of `alpha_sigma`.
pub fn log_conditional_alpha_sigma(
    sigma_z2: f64,
    alpha: f64,
    beta_sigma: f64,
    h: GammaHyper,
) -> f64 {
    ln_inv_gamma_pdf(sigma_z2, alpha, beta_sigma) + ln_gamma_pdf(alpha, h.shape, h.rate)
}

/// Unnormalized log conditional of `beta_sigma`.
pub fn log_conditional_beta_sigma(
    sigma_z2: f64,
    alpha_sigma: f64,
    beta: f64,
    h: GammaHyper,
) -> f64 {
    ln_inv_gamma_pdf(sigma_z2, alpha_sigma, beta) + ln_gamma_pdf(beta, h.shape, h.rate)
}

/// Metropolis update of `alpha_sigma` then `beta_sigma`, each with a
/// zero-reflected Gaussian random walk (a symmetric proposal, so the
/// acceptance ratio is the conditional ratio alone). Returns the acceptance
/// flags.
pub fn mh_step_noise_hypers(
    state: &mut ModelState,
    h_alpha: GammaHyper,
    h_beta: GammaHyper,
    rng: &mut RngStream,
) -> (bool, bool) {
    let mut accepted = (false, false);

    let step: f64 = rand_distr::StandardNormal.sample(rng);
    let proposed = (state.alpha_sigma + NOISE_HYPER_RW_STD * step).abs();
    let log_ratio = log_conditional_alpha_sigma(state.sigma_z2, proposed, state.beta_sigma, h_alpha)
        - log_conditional_alpha_sigma(state.sigma_z2, state.alpha_sigma, state.beta_sigma, h_alpha);
    if rng.random::<f64>().ln() < log_ratio {
        state.alpha_sigma = proposed;
        accepted.0 = true;
    }

    let step: f64 = rand_distr::StandardNormal.sample(rng);
    let proposed = (state.beta_sigma + NOISE_HYPER_RW_STD * step).abs();
    let log_ratio = log_conditional_beta_sigma(state.sigma_z2, state.alpha_sigma, proposed, h_beta)
        - log_conditional_beta_sigma(state.sigma_z2, state.alpha_sigma, state.beta_sigma, h_beta);
    if rng.random::<f64>().ln() < log_ratio {
        state.beta_sigma = proposed;
        accepted.1 = true;
    }

    accepted
}

/// Factored Gram matrix and precision for the abundance conditional at a
/// given temperature: mean is `G^{-1} F z_n`, precision `G / (T sigma^2)`.
pub(crate) struct AbundanceConditional {
    chol: crate::linalg::Cholesky,
    precision: Array2<f64>,
    f: Array2<f64>,
}

impl AbundanceConditional {
    pub(crate) fn new(state: &ModelState, temperature: f64) -> Result<Self> {
        let f = state.endmembers();
        let gram = f.dot(&f.t());
        let chol = cholesky_with_jitter(&gram, GRAM_JITTER)?;
        let k = gram.nrows();
        let trace: f64 = (0..k).map(|i| gram[(i, i)]).sum();
        let mut jittered = gram;
        let jitter = GRAM_JITTER * trace.abs().max(f64::MIN_POSITIVE) / k as f64;
        for i in 0..k {
            jittered[(i, i)] += jitter;
        }
        let precision = jittered / (temperature * state.sigma_z2);
        Ok(Self { chol, precision, f })
    }

    pub(crate) fn sample_row(
        &self,
        z_row: &[f64],
        current: &[f64],
        pivot: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        let k = self.f.nrows();
        if k == 1 {
            return Ok(vec![1.0]);
        }
        let mut fz = Array1::<f64>::zeros(k);
        for ki in 0..k {
            let mut acc = 0.0;
            for (d, z) in z_row.iter().enumerate() {
                acc += self.f[(ki, d)] * z;
            }
            fz[ki] = acc;
        }
        let mean = self.chol.solve(&fz);
        sample_simplex_gaussian_with_precision(&mean, &self.precision, current, pivot, rng)
    }
}

/// Draw one abundance row from its simplex-constrained Gaussian
/// conditional. `pivot` selects the redundant simplex coordinate for this
/// scan; callers rotate it between sweeps.
pub fn sample_abundance_row(
    image: &ObservedImage,
    state: &ModelState,
    n: usize,
    temperature: f64,
    pivot: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if state.k() == 0 {
        return Err(Error::Contract("no features to unmix against".into()));
    }
    let cond = AbundanceConditional::new(state, temperature)?;
    let z_row: Vec<f64> = image.z.row(n).to_vec();
    let current: Vec<f64> = state.s.row(n).to_vec();
    cond.sample_row(&z_row, &current, pivot, rng)
}

/// Per-band total precision and natural parameter of the weight-row
/// conditional. Both the likelihood and prior contributions are diagonal,
/// so band `d` is fully described by `(precision_d, b_d)` with conditional
/// mean `b_d / precision_d`. Bands with zero total precision (K = 1 and the
/// activation off) are flagged with `precision_d = 0` and left unchanged by
/// the sampler.
pub(crate) fn weight_row_params(
    state: &ModelState,
    k: usize,
    gamma_w: f64,
    temperature: f64,
    s_dot_r: &[f64],
    s2_k: f64,
    w_colsum: &[f64],
) -> Vec<(f64, f64)> {
    let kf = state.k() as f64;
    let bands = state.bands();
    let prior_prec = 2.0 * gamma_w * (1.0 - 1.0 / kf);
    let inv_tvar = 1.0 / (temperature * state.sigma_z2);
    let mut params = Vec::with_capacity(bands);
    for d in 0..bands {
        let active = state.a.get(k, d) == 1;
        let w_kd = state.w[(k, d)];
        let mut prec = prior_prec;
        let mut b = 2.0 * gamma_w / kf * (w_colsum[d] - w_kd);
        if active {
            prec += s2_k * inv_tvar;
            // rho_{n,d} = R_{n,d} + s_{n,k} f_{k,d}, so
            // sum_n s_{n,k} rho_{n,d} = (S^T R)_{k,d} + s2_k * w_{k,d}.
            b += (s_dot_r[d] + s2_k * w_kd) * inv_tvar;
        }
        params.push((prec, b));
    }
    params
}

/// Draw one weight row from its truncated-normal conditional, leaving the
/// state untouched. Components with positive total precision are redrawn;
/// zero-precision components keep their current value.
pub fn sample_weight_row(
    image: &ObservedImage,
    state: &ModelState,
    k: usize,
    gamma_w: f64,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if k >= state.k() {
        return Err(Error::Contract(format!(
            "weight row {k} out of range for K = {}",
            state.k()
        )));
    }
    let f = state.endmembers();
    let recon = state.s.dot(&f);
    let residual = &image.z - &recon;
    let s_col = state.s.column(k);
    let s2_k: f64 = s_col.iter().map(|v| v * v).sum();
    let mut s_dot_r = vec![0.0; state.bands()];
    for (n, s) in s_col.iter().enumerate() {
        for (d, slot) in s_dot_r.iter_mut().enumerate() {
            *slot += s * residual[(n, d)];
        }
    }
    let w_colsum: Vec<f64> = (0..state.bands())
        .map(|d| state.w.column(d).sum())
        .collect();
    let params = weight_row_params(state, k, gamma_w, temperature, &s_dot_r, s2_k, &w_colsum);
    draw_weight_row(&params, state, k, rng)
}

/// Below this total precision the conditional is effectively improper
/// (K = 1 with the band inactive, or a fully flattened likelihood); the
/// component keeps its current value instead of drawing from an
/// astronomically wide truncated normal.
const WEIGHT_PRECISION_FLOOR: f64 = 1e-12;

pub(crate) fn draw_weight_row(
    params: &[(f64, f64)],
    state: &ModelState,
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(params.len());
    for (d, &(prec, b)) in params.iter().enumerate() {
        if prec <= WEIGHT_PRECISION_FLOOR {
            row.push(state.w[(k, d)]);
            continue;
        }
        let spec = TruncatedNormalSpec::new(b / prec, 1.0 / prec, 0.0)?;
        row.push(sample_truncated_normal(&spec, rng)?);
    }
    Ok(row)
}
