//! Per-band activation updates, new-feature (birth) proposals, and
//! endmember merge proposals.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::dist::{ln_poisson_pmf, sample_gamma, sample_poisson, sample_truncated_normal, TruncatedNormalSpec};
use crate::error::{Error, Result};
use crate::ibp;
use crate::model::{log_posterior, HyperConfig, ModelState, ObservedImage};
use crate::rng::RngStream;

use super::Caches;

/// Scans of the short Gibbs run that draws proposed weight rows from the
/// distance prior.
const BIRTH_GIBBS_SCANS: usize = 5;

/// Outcome of one band block: entry updates, the birth proposal, and the
/// zero-row cleanup.
#[derive(Debug, Default, Clone, Copy)]
pub struct BandOutcome {
    pub births_accepted: usize,
    pub features_removed: usize,
}

/// Augmented log acceptance for a birth of `k_plus` features:
/// `log r + log Pois(k_plus; rate) - log(P+ 1[k=1] + (1-P+) Pois(k_plus; rate))`,
/// the Metropolis correction for the mixture proposal that dedicates mass
/// `P+` to single-feature births.
pub fn birth_log_acceptance(log_lik_ratio: f64, k_plus: u64, rate: f64, p_plus: f64) -> f64 {
    let ln_pois = ln_poisson_pmf(k_plus, rate);
    if k_plus == 1 {
        let q = p_plus + (1.0 - p_plus) * ln_pois.exp();
        if q <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_lik_ratio + ln_pois - q.ln()
    } else {
        // The Poisson mass cancels: r' = r / (1 - P+).
        log_lik_ratio - (1.0 - p_plus).ln()
    }
}

/// Update every activation entry of band `d` from its two-case conditional
/// (tempered column likelihood times the IBP entry prior), then run the
/// new-feature Metropolis block and remove features that ended up inactive
/// everywhere. `caches` is kept consistent with the state.
pub(crate) fn band_block(
    image: &ObservedImage,
    state: &mut ModelState,
    caches: &mut Caches,
    d: usize,
    cfg: &HyperConfig,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<BandOutcome> {
    let bands = state.bands();
    let n = state.pixels();
    let inv_tvar = 1.0 / (2.0 * temperature * state.sigma_z2);

    for k in 0..state.k() {
        let m_excl = state.a.row_sum_excluding(k, d);
        let currently_active = state.a.get(k, d) == 1;
        let w_kd = state.w[(k, d)];

        let activate = if m_excl == 0 {
            // The infinite-limit prior never re-activates a band-singleton.
            false
        } else {
            let p1 = ibp::prior_prob_entry_active(m_excl, bands, state.ibp.beta_a);
            let prior_logit = (p1 / (1.0 - p1)).ln();
            // r0 = residual column with the entry off; the log-likelihood
            // difference between the two cases reduces to a dot product.
            let mut r_dot_s = 0.0;
            for ni in 0..n {
                r_dot_s += caches.r[(ni, d)] * state.s[(ni, k)];
            }
            if currently_active {
                r_dot_s += w_kd * caches.s2[k];
            }
            let delta_ll = (2.0 * w_kd * r_dot_s - w_kd * w_kd * caches.s2[k]) * inv_tvar;
            let logit = prior_logit + delta_ll;
            let p_active = 1.0 / (1.0 + (-logit).exp());
            rng.random::<f64>() < p_active
        };

        if activate != currently_active {
            let sign = if activate { -1.0 } else { 1.0 };
            for ni in 0..n {
                caches.r[(ni, d)] += sign * w_kd * state.s[(ni, k)];
            }
            state.a.set(k, d, activate as u8);
            caches.f[(k, d)] = if activate { w_kd } else { 0.0 };
        }
    }

    let mut outcome = BandOutcome::default();
    if propose_new_features_core(image, state, caches, d, cfg, temperature, rng)? {
        outcome.births_accepted += 1;
    }
    let removed = state.cleanup_zero_rows();
    if removed > 0 {
        outcome.features_removed = removed;
        caches.rebuild(image, state);
    }
    Ok(outcome)
}

/// Public wrapper over the band block that rebuilds the caches around the
/// call.
pub fn update_activations_band(
    image: &ObservedImage,
    state: &mut ModelState,
    d: usize,
    cfg: &HyperConfig,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<BandOutcome> {
    if d >= state.bands() {
        return Err(Error::Contract(format!(
            "band {d} out of range for D = {}",
            state.bands()
        )));
    }
    let mut caches = Caches::new(image, state);
    band_block(image, state, &mut caches, d, cfg, temperature, rng)
}

/// Propose `K+` new features active only at band `d` and accept or reject
/// them jointly. The proposal draws `K+` from the mixture
/// `P+ 1[K+ = 1] + (1 - P+) Poisson(rate)`, for which the augmented ratio
/// is the exact Metropolis correction; weight rows come from a short Gibbs
/// run over the distance prior with existing rows frozen, and abundance
/// columns from per-pixel Gamma(1/K, 1) draws.
///
/// The likelihood ratio compares the augmented reconstruction
/// `s_n F + s+_n (a+ . w+)` against the current one, conditioning on the
/// existing variables; the abundance rows are renormalized to the simplex
/// only when the proposal is accepted. Rejection leaves the state
/// untouched.
pub fn propose_new_features(
    image: &ObservedImage,
    state: &mut ModelState,
    d: usize,
    cfg: &HyperConfig,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<bool> {
    let mut caches = Caches::new(image, state);
    propose_new_features_core(image, state, &mut caches, d, cfg, temperature, rng)
}

pub(crate) fn propose_new_features_core(
    image: &ObservedImage,
    state: &mut ModelState,
    caches: &mut Caches,
    d: usize,
    cfg: &HyperConfig,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<bool> {
    let rate = ibp::new_feature_rate(&state.ibp, state.bands());
    let k_plus = if rng.random::<f64>() < cfg.p_plus {
        1
    } else {
        sample_poisson(rate, rng)?
    };
    if k_plus == 0 {
        return Ok(false);
    }
    let k_plus_usize = k_plus as usize;
    let k_old = state.k();
    let n = state.pixels();
    let bands = state.bands();

    let w_new = sample_weight_rows_from_prior(state, k_plus_usize, cfg.gamma_w, image, rng)?;

    // Proposed abundance columns: Gamma(1/K, 1) per pixel and new feature.
    let shape = if k_old > 0 { 1.0 / k_old as f64 } else { 1.0 };
    let mut s_plus = Array2::<f64>::zeros((n, k_plus_usize));
    for ni in 0..n {
        for j in 0..k_plus_usize {
            s_plus[(ni, j)] = sample_gamma(shape, 1.0, rng)?;
        }
    }

    // Likelihood ratio of the augmented model, conditioned on the existing
    // variables: new rows are active only at band d, so only that residual
    // column changes.
    let mut delta_rss = 0.0;
    for ni in 0..n {
        let mut extra = 0.0;
        for j in 0..k_plus_usize {
            extra += s_plus[(ni, j)] * w_new[(j, d)];
        }
        let r_old = caches.r[(ni, d)];
        let r_new = r_old - extra;
        delta_rss += r_new * r_new - r_old * r_old;
    }
    let log_lik_ratio = -delta_rss / (2.0 * temperature * state.sigma_z2);

    let log_accept = birth_log_acceptance(log_lik_ratio, k_plus, rate, cfg.p_plus);
    if rng.random::<f64>().ln() < log_accept {
        // Commit: append the new features and renormalize every abundance
        // row back onto the simplex.
        for _ in 0..k_plus_usize {
            let mut row = vec![0u8; bands];
            row[d] = 1;
            state.a.push_row(row);
        }
        let mut w_full = Array2::<f64>::zeros((k_old + k_plus_usize, bands));
        w_full.slice_mut(ndarray::s![..k_old, ..]).assign(&state.w);
        w_full.slice_mut(ndarray::s![k_old.., ..]).assign(&w_new);
        state.w = w_full;
        let mut s_full = Array2::<f64>::zeros((n, k_old + k_plus_usize));
        for ni in 0..n {
            let extra: f64 = (0..k_plus_usize).map(|j| s_plus[(ni, j)]).sum();
            let denom = if k_old > 0 { 1.0 + extra } else { extra.max(f64::MIN_POSITIVE) };
            for k in 0..k_old {
                s_full[(ni, k)] = state.s[(ni, k)] / denom;
            }
            for j in 0..k_plus_usize {
                s_full[(ni, k_old + j)] = s_plus[(ni, j)] / denom;
            }
        }
        state.s = s_full;
        caches.rebuild(image, state);
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Gibbs-sample `k_plus` weight rows from the distance prior, holding the
/// existing rows fixed. Each conditional is an independent truncated normal
/// per band with precision `2 gamma_w (1 - 1/K_tot)` and mean equal to the
/// mean of all other rows. For a lone row the prior is improper; fall back
/// to uniform draws over the data range.
fn sample_weight_rows_from_prior(
    state: &ModelState,
    k_plus: usize,
    gamma_w: f64,
    image: &ObservedImage,
    rng: &mut RngStream,
) -> Result<Array2<f64>> {
    let bands = state.bands();
    let k_old = state.k();
    let k_tot = k_old + k_plus;

    if k_tot == 1 {
        let z_max = image.z.iter().cloned().fold(0.0f64, f64::max).max(1e-6);
        return Ok(Array2::from_shape_fn((k_plus, bands), |_| {
            rng.random::<f64>() * z_max
        }));
    }

    let mut colsum_existing = vec![0.0; bands];
    for k in 0..k_old {
        for (d, slot) in colsum_existing.iter_mut().enumerate() {
            *slot += state.w[(k, d)];
        }
    }
    // Warm start at the mean of the existing rows (or zero when none).
    let init: Vec<f64> = colsum_existing
        .iter()
        .map(|&c| if k_old > 0 { c / k_old as f64 } else { 0.0 })
        .collect();
    let mut w_new = Array2::from_shape_fn((k_plus, bands), |(_, d)| init[d]);

    let prec = 2.0 * gamma_w * (1.0 - 1.0 / k_tot as f64);
    let var = 1.0 / prec;
    for _ in 0..BIRTH_GIBBS_SCANS {
        for j in 0..k_plus {
            for d in 0..bands {
                let mut others = colsum_existing[d];
                for jj in 0..k_plus {
                    if jj != j {
                        others += w_new[(jj, d)];
                    }
                }
                let mean = others / (k_tot as f64 - 1.0);
                let spec = TruncatedNormalSpec::new(mean, var, 0.0)?;
                w_new[(j, d)] = sample_truncated_normal(&spec, rng)?;
            }
        }
    }
    Ok(w_new)
}

/// Pearson correlation between two equally long slices; `None` when either
/// side has no variance.
fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 1e-30 || vy <= 1e-30 {
        None
    } else {
        // Rounding can push near-identical rows a hair past 1.0, which
        // matters when the merge threshold is exactly 1.
        Some((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Merged state for rows `i` and `j` of the current state: the row with the
/// larger total abundance mass survives, activations are OR-ed, weights are
/// averaged by abundance mass, and the abundance columns are summed.
pub fn merge_candidate(state: &ModelState, i: usize, j: usize) -> ModelState {
    let mass_i: f64 = state.s.column(i).sum();
    let mass_j: f64 = state.s.column(j).sum();
    let (survivor, other) = if mass_i >= mass_j { (i, j) } else { (j, i) };
    let total = mass_i + mass_j;

    let mut cand = state.clone();
    cand.a.or_rows(survivor, other);
    for d in 0..state.bands() {
        let merged = if total > 0.0 {
            (mass_i * state.w[(i, d)] + mass_j * state.w[(j, d)]) / total
        } else {
            0.5 * (state.w[(i, d)] + state.w[(j, d)])
        };
        cand.w[(survivor, d)] = merged;
    }
    for ni in 0..state.pixels() {
        cand.s[(ni, survivor)] = state.s[(ni, i)] + state.s[(ni, j)];
    }
    cand.a.remove_row(other);
    let keep: Vec<usize> = (0..state.k()).filter(|&k| k != other).collect();
    cand.w = cand.w.select(Axis(0), &keep);
    cand.s = cand.s.select(Axis(1), &keep);
    cand
}

/// Propose merging every endmember pair whose rows of `F` correlate above
/// `cfg.t_corr`, in descending correlation, each row participating in at
/// most one proposal per sweep. Each proposal is accepted via a Metropolis
/// step on the full tempered log posterior (the IBP term sees the changed
/// K). Returns the number of accepted merges.
pub fn propose_merge(
    image: &ObservedImage,
    state: &mut ModelState,
    cfg: &HyperConfig,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<usize> {
    let k0 = state.k();
    if k0 < 2 {
        return Ok(0);
    }
    let f = state.endmembers();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..k0 {
        for j in (i + 1)..k0 {
            let fi: Vec<f64> = f.row(i).to_vec();
            let fj: Vec<f64> = f.row(j).to_vec();
            if let Some(c) = pearson(&fi, &fj) {
                if c > cfg.t_corr {
                    pairs.push((c, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // Rows are addressed by their pre-sweep index; removals shift the
    // live indices down.
    let mut current_index: Vec<Option<usize>> = (0..k0).map(Some).collect();
    let mut used = vec![false; k0];
    let mut accepted = 0;

    for (_, i, j) in pairs {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let (ci, cj) = match (current_index[i], current_index[j]) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let cand = merge_candidate(state, ci, cj);
        let lp_cur = log_posterior(image, state, cfg, temperature)?;
        let lp_cand = log_posterior(image, &cand, cfg, temperature)?;
        if rng.random::<f64>().ln() < lp_cand - lp_cur {
            // Which current row disappeared?
            let mass_i: f64 = state.s.column(ci).sum();
            let mass_j: f64 = state.s.column(cj).sum();
            let removed = if mass_i >= mass_j { cj } else { ci };
            *state = cand;
            accepted += 1;
            for slot in current_index.iter_mut() {
                match slot {
                    Some(idx) if *idx == removed => *slot = None,
                    Some(idx) if *idx > removed => *idx -= 1,
                    _ => {}
                }
            }
        }
    }
    Ok(accepted)
}
