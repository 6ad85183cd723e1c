//! The inference engine: systematic Gibbs sweeps over all conditionals,
//! birth and merge Metropolis moves, parallel tempering with cooling, and
//! approximate-MAP extraction.
//!
//! Sweep order: noise variance, noise hyperparameters, all abundance rows,
//! all weight rows, the band loop (activation entries plus the new-feature
//! block per band), merge proposals, and finally the IBP hyperparameters.
//! Every `swap_period` sweeps adjacent chains propose state swaps and the
//! temperature ladder cools.

mod conditionals;
mod moves;
mod tempering;

pub use conditionals::{
    log_conditional_alpha_sigma, log_conditional_beta_sigma, mh_step_noise_hypers,
    sample_abundance_row, sample_sigma2, sample_weight_row, sigma2_conditional_params,
};
pub use moves::{
    birth_log_acceptance, merge_candidate, propose_merge, propose_new_features,
    update_activations_band, BandOutcome,
};
pub use tempering::{cool, pt_swap};

use ndarray::Array2;

use crate::dist::{sample_gamma, sample_inverse_gamma};
use crate::error::{Error, Result};
use crate::ibp::{self, ActivationMatrix, IbpParams};
use crate::model::{log_posterior, HyperConfig, ModelState, ObservedImage};
use crate::rng::RngStream;

/// Reserved stream id for ensemble-level randomness (swap decisions).
const ENSEMBLE_STREAM: u64 = 1 << 32;

/// Cached per-sweep quantities kept consistent with the state: the
/// endmember matrix F, the residual matrix R = Z - S F, and the squared
/// column norms of S.
pub(crate) struct Caches {
    pub(crate) f: Array2<f64>,
    pub(crate) r: Array2<f64>,
    pub(crate) s2: Vec<f64>,
}

impl Caches {
    pub(crate) fn new(image: &ObservedImage, state: &ModelState) -> Self {
        let mut caches = Caches {
            f: Array2::zeros((0, 0)),
            r: Array2::zeros((0, 0)),
            s2: Vec::new(),
        };
        caches.rebuild(image, state);
        caches
    }

    pub(crate) fn rebuild(&mut self, image: &ObservedImage, state: &ModelState) {
        self.f = state.endmembers();
        self.r = &image.z - &state.s.dot(&self.f);
        self.s2 = (0..state.k())
            .map(|k| state.s.column(k).iter().map(|v| v * v).sum())
            .collect();
    }

    pub(crate) fn rss(&self) -> f64 {
        self.r.iter().map(|e| e * e).sum()
    }
}

/// One chain of the tempered ensemble.
#[derive(Debug, Clone)]
pub struct Chain {
    pub state: ModelState,
    pub temperature: f64,
    pub rng: RngStream,
}

/// Ordered set of tempered chains; index 0 always samples at temperature 1.
pub struct TemperedEnsemble {
    pub chains: Vec<Chain>,
    swap_rng: RngStream,
    pub sweep_counter: usize,
}

/// Counters produced by one sweep of one chain.
#[derive(Debug, Default, Clone, Copy)]
pub struct SweepStats {
    pub births: usize,
    pub merges: usize,
}

/// One per-sweep record of the cold chain.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub k: usize,
    pub sigma_z2: f64,
    pub log_posterior: f64,
    pub accepted_new_features: usize,
    pub accepted_merges: usize,
    pub accepted_swaps: usize,
}

/// Scalar trace of the cold chain, one record per sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepTrace {
    pub records: Vec<SweepRecord>,
}

/// Result of a full run: the approximate MAP state of the cold chain, its
/// log posterior, the scalar trace, and the inferred endmember count.
#[derive(Debug, Clone)]
pub struct UnmixingResult {
    pub map_state: ModelState,
    pub map_log_posterior: f64,
    pub trace: SweepTrace,
    pub estimated_k: usize,
}

impl TemperedEnsemble {
    /// Build the ladder: chain i at temperature `ladder_ratio^i`, each with
    /// its own RNG stream, initialized at K = 1 with priors-drawn scalars.
    pub fn new(image: &ObservedImage, cfg: &HyperConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut chains = Vec::with_capacity(cfg.n_chains);
        for i in 0..cfg.n_chains {
            let mut rng = RngStream::new(seed, i as u64);
            let state = init_state(image, cfg, &mut rng)?;
            chains.push(Chain {
                state,
                temperature: cfg.ladder_ratio.powi(i as i32),
                rng,
            });
        }
        Ok(Self {
            chains,
            swap_rng: RngStream::new(seed, ENSEMBLE_STREAM),
            sweep_counter: 0,
        })
    }

    /// Advance every chain one full sweep (no swap round). Returns per-chain
    /// counters.
    pub fn sweep(&mut self, image: &ObservedImage, cfg: &HyperConfig) -> Result<Vec<SweepStats>> {
        let sweep_idx = self.sweep_counter;
        let mut stats = Vec::with_capacity(self.chains.len());
        for chain in self.chains.iter_mut() {
            stats.push(sweep_chain(image, chain, cfg, sweep_idx)?);
        }
        self.sweep_counter += 1;
        Ok(stats)
    }

    /// Swap round followed by cooling; returns accepted swap count.
    pub fn swap_and_cool(&mut self, image: &ObservedImage, cfg: &HyperConfig) -> Result<usize> {
        let mut rng = self.swap_rng.clone();
        let accepted = pt_swap(self, image, &mut rng)?;
        self.swap_rng = rng;
        cool(self, cfg.cooling_factor);
        Ok(accepted)
    }
}

/// Initial state: one feature with all bands active, uniform weights over
/// the data range, all abundance mass on that feature, and every scalar
/// drawn from its prior.
fn init_state(image: &ObservedImage, cfg: &HyperConfig, rng: &mut RngStream) -> Result<ModelState> {
    use rand::Rng;
    let bands = image.bands();
    let n = image.pixels();
    let alpha_sigma = sample_gamma(cfg.h_alpha_sigma.shape, cfg.h_alpha_sigma.rate, rng)?;
    let beta_sigma = sample_gamma(cfg.h_beta_sigma.shape, cfg.h_beta_sigma.rate, rng)?;
    let sigma_z2 = sample_inverse_gamma(alpha_sigma, beta_sigma, rng)?;
    let alpha_a = sample_gamma(cfg.h_alpha_a.shape, cfg.h_alpha_a.rate, rng)?;
    let beta_a = sample_gamma(cfg.h_beta_a.shape, cfg.h_beta_a.rate, rng)?;
    let z_max = image.z.iter().cloned().fold(0.0f64, f64::max).max(1e-6);
    let w = Array2::from_shape_fn((1, bands), |_| rng.random::<f64>() * z_max);
    let state = ModelState {
        a: ActivationMatrix::ones(1, bands),
        w,
        s: Array2::ones((n, 1)),
        sigma_z2,
        alpha_sigma,
        beta_sigma,
        ibp: IbpParams {
            alpha_a,
            beta_a,
            h_alpha_a: cfg.h_alpha_a,
            h_beta_a: cfg.h_beta_a,
        },
    };
    state.validate(1e-9)?;
    Ok(state)
}

/// One full systematic sweep of a single chain.
fn sweep_chain(
    image: &ObservedImage,
    chain: &mut Chain,
    cfg: &HyperConfig,
    sweep_idx: usize,
) -> Result<SweepStats> {
    let state = &mut chain.state;
    let temperature = chain.temperature;
    let rng = &mut chain.rng;
    let nd = (image.pixels() * image.bands()) as f64;
    let mut caches = Caches::new(image, state);

    // Noise variance and its hyperparameters.
    state.sigma_z2 =
        conditionals::sample_sigma2_from_rss(state, nd, caches.rss(), temperature, rng)?;
    conditionals::mh_step_noise_hypers(state, cfg.h_alpha_sigma, cfg.h_beta_sigma, rng);

    // Abundance rows.
    if state.k() > 0 {
        let cond = conditionals::AbundanceConditional::new(state, temperature)?;
        let pivot = sweep_idx;
        for n in 0..state.pixels() {
            let z_row: Vec<f64> = image.z.row(n).to_vec();
            let current: Vec<f64> = state.s.row(n).to_vec();
            let new_row = cond.sample_row(&z_row, &current, pivot, rng)?;
            for (k, v) in new_row.iter().enumerate() {
                state.s[(n, k)] = *v;
            }
            // Refresh the residual row.
            for d in 0..image.bands() {
                let mut recon = 0.0;
                for k in 0..state.k() {
                    recon += state.s[(n, k)] * caches.f[(k, d)];
                }
                caches.r[(n, d)] = image.z[(n, d)] - recon;
            }
        }
        caches.s2 = (0..state.k())
            .map(|k| state.s.column(k).iter().map(|v| v * v).sum())
            .collect();
    }

    // Weight rows.
    if state.k() > 0 {
        let bands = state.bands();
        let mut w_colsum: Vec<f64> = (0..bands).map(|d| state.w.column(d).sum()).collect();
        for k in 0..state.k() {
            let mut s_dot_r = vec![0.0; bands];
            for n in 0..state.pixels() {
                let s = state.s[(n, k)];
                if s == 0.0 {
                    continue;
                }
                for (d, slot) in s_dot_r.iter_mut().enumerate() {
                    *slot += s * caches.r[(n, d)];
                }
            }
            let params = conditionals::weight_row_params(
                state,
                k,
                cfg.gamma_w,
                temperature,
                &s_dot_r,
                caches.s2[k],
                &w_colsum,
            );
            let new_row = conditionals::draw_weight_row(&params, state, k, rng)?;
            for (d, &v) in new_row.iter().enumerate() {
                let old_w = state.w[(k, d)];
                if v != old_w {
                    w_colsum[d] += v - old_w;
                    state.w[(k, d)] = v;
                }
                let new_f = state.a.get(k, d) as f64 * v;
                let delta_f = new_f - caches.f[(k, d)];
                if delta_f != 0.0 {
                    for n in 0..state.pixels() {
                        caches.r[(n, d)] -= state.s[(n, k)] * delta_f;
                    }
                    caches.f[(k, d)] = new_f;
                }
            }
        }
    }

    // Band loop: activation entries, birth proposals, cleanup.
    let mut births = 0;
    for d in 0..state.bands() {
        let outcome = moves::band_block(image, state, &mut caches, d, cfg, temperature, rng)?;
        births += outcome.births_accepted;
    }

    // Merge proposals.
    let mut merges = 0;
    if sweep_idx.is_multiple_of(cfg.merge_period) && state.k() >= 2 {
        merges = moves::propose_merge(image, state, cfg, temperature, rng)?;
    }

    // IBP hyperparameters.
    state.ibp.alpha_a = ibp::sample_alpha_a(state.k(), &state.ibp, state.bands(), rng)?;
    let (new_ibp, _) = ibp::mh_step_beta_a(&state.a, &state.ibp, rng)?;
    state.ibp = new_ibp;

    state.validate(1e-9)?;
    Ok(SweepStats { births, merges })
}

/// Run the full tempered sampler and return the approximate MAP estimate
/// from the cold chain's post-burn-in sweeps.
pub fn run(image: &ObservedImage, cfg: &HyperConfig, seed: u64) -> Result<UnmixingResult> {
    cfg.validate()?;
    if cfg.n_iter == 0 {
        return Err(Error::Input(
            "n_iter must be positive: no post-burn-in samples otherwise".into(),
        ));
    }
    let burn_in = (cfg.burn_in_fraction * cfg.n_iter as f64).floor() as usize;
    let mut ensemble = TemperedEnsemble::new(image, cfg, seed)?;
    let mut trace = SweepTrace::default();
    let mut best: Option<(f64, ModelState)> = None;

    for sweep in 0..cfg.n_iter {
        let stats = ensemble.sweep(image, cfg)?;
        let mut swaps = 0;
        if (sweep + 1) % cfg.swap_period == 0 {
            swaps = ensemble.swap_and_cool(image, cfg)?;
        }
        let cold = &ensemble.chains[0].state;
        let lp = log_posterior(image, cold, cfg, 1.0)?;
        trace.records.push(SweepRecord {
            sweep,
            k: cold.k(),
            sigma_z2: cold.sigma_z2,
            log_posterior: lp,
            accepted_new_features: stats[0].births,
            accepted_merges: stats[0].merges,
            accepted_swaps: swaps,
        });
        if sweep >= burn_in {
            let better = match &best {
                Some((best_lp, _)) => lp > *best_lp,
                None => true,
            };
            if better {
                best = Some((lp, cold.clone()));
            }
        }
    }

    let (map_log_posterior, map_state) = best.ok_or_else(|| {
        Error::Contract("no post-burn-in sample with a finite log posterior".into())
    })?;
    let estimated_k = map_state.k();
    Ok(UnmixingResult {
        map_state,
        map_log_posterior,
        trace,
        estimated_k,
    })
}
