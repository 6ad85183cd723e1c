//! Domain state, priors, likelihood, and the unnormalized log posterior,
//! including tempered variants.
//!
//! Temperature enters only through the likelihood variance: a chain at
//! temperature T sees `N(z_n | s_n F, T sigma_z^2 I)`. Priors are never
//! tempered. Constraint violations are reported as `f64::NEG_INFINITY`,
//! which propagates through sums and loses every comparison.

use ndarray::Array2;

use crate::dist::{ln_gamma_pdf, ln_inv_gamma_pdf};
use crate::error::{Error, Result};
use crate::ibp::{self, ActivationMatrix, GammaHyper, IbpParams};

const SIMPLEX_TOL: f64 = 1e-9;

/// Observed hyperspectral image: N pixel spectra over D bands.
#[derive(Debug, Clone)]
pub struct ObservedImage {
    pub z: Array2<f64>,
    pub width: usize,
    pub height: usize,
    pub band_centers: Option<Vec<f64>>,
}

impl ObservedImage {
    pub fn new(z: Array2<f64>, width: usize, height: usize) -> Result<Self> {
        let (n, d) = z.dim();
        if n < 1 || d < 2 {
            return Err(Error::Input(format!(
                "image must have at least 1 pixel and 2 bands, got {n}x{d}"
            )));
        }
        if width * height != n {
            return Err(Error::Input(format!(
                "width*height = {} does not match pixel count {n}",
                width * height
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("image contains non-finite values".into()));
        }
        Ok(Self {
            z,
            width,
            height,
            band_centers: None,
        })
    }

    /// Image with trivial 1-row geometry.
    pub fn from_matrix(z: Array2<f64>) -> Result<Self> {
        let n = z.nrows();
        Self::new(z, n, 1)
    }

    pub fn pixels(&self) -> usize {
        self.z.nrows()
    }

    pub fn bands(&self) -> usize {
        self.z.ncols()
    }
}

/// Fixed hyper-hyperparameters and run controls.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperConfig {
    pub gamma_w: f64,
    pub h_alpha_sigma: GammaHyper,
    pub h_beta_sigma: GammaHyper,
    pub h_alpha_a: GammaHyper,
    pub h_beta_a: GammaHyper,
    /// Probability mass the birth proposal dedicates to a single new feature.
    pub p_plus: f64,
    /// Correlation threshold above which endmember pairs are proposed for merging.
    pub t_corr: f64,
    pub n_iter: usize,
    pub n_chains: usize,
    /// Temperature of chain i is `ladder_ratio^i`.
    pub ladder_ratio: f64,
    pub cooling_factor: f64,
    pub swap_period: usize,
    pub burn_in_fraction: f64,
    /// Merge proposals run every `merge_period` sweeps.
    pub merge_period: usize,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            gamma_w: 100.0,
            h_alpha_sigma: GammaHyper::new(1.0, 1.0),
            h_beta_sigma: GammaHyper::new(1.0, 1.0),
            h_alpha_a: GammaHyper::new(1.0, 1.0),
            h_beta_a: GammaHyper::new(1.0, 10.0),
            p_plus: 0.1,
            t_corr: 0.95,
            n_iter: 10_000,
            n_chains: 5,
            ladder_ratio: 2.0,
            cooling_factor: 0.95,
            swap_period: 10,
            burn_in_fraction: 0.2,
            merge_period: 1,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma_w > 0.0) {
            problems.push("gamma_w must be positive");
        }
        for (name, h) in [
            ("h_alpha_sigma", self.h_alpha_sigma),
            ("h_beta_sigma", self.h_beta_sigma),
            ("h_alpha_a", self.h_alpha_a),
            ("h_beta_a", self.h_beta_a),
        ] {
            if !(h.shape > 0.0 && h.rate > 0.0) {
                problems.push(match name {
                    "h_alpha_sigma" => "h_alpha_sigma must be positive",
                    "h_beta_sigma" => "h_beta_sigma must be positive",
                    "h_alpha_a" => "h_alpha_a must be positive",
                    _ => "h_beta_a must be positive",
                });
            }
        }
        if !(self.p_plus > 0.0 && self.p_plus < 1.0) {
            problems.push("p_plus must lie in (0,1)");
        }
        if !(self.t_corr > 0.0 && self.t_corr <= 1.0) {
            problems.push("t_corr must lie in (0,1]");
        }
        if self.n_chains == 0 {
            problems.push("n_chains must be at least 1");
        }
        if !(self.ladder_ratio > 1.0) {
            problems.push("ladder_ratio must exceed 1");
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor <= 1.0) {
            problems.push("cooling_factor must lie in (0,1]");
        }
        if self.swap_period == 0 {
            problems.push("swap_period must be at least 1");
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            problems.push("burn_in_fraction must lie in [0,1)");
        }
        if self.merge_period == 0 {
            problems.push("merge_period must be at least 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(problems.join("; ")))
        }
    }

    pub fn ibp_params(&self) -> IbpParams {
        IbpParams {
            alpha_a: 1.0,
            beta_a: 1.0,
            h_alpha_a: self.h_alpha_a,
            h_beta_a: self.h_beta_a,
        }
    }
}

/// One posterior sample: activations, weights, abundances, noise variance,
/// and all sampled hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub a: ActivationMatrix,
    pub w: Array2<f64>,
    pub s: Array2<f64>,
    pub sigma_z2: f64,
    pub alpha_sigma: f64,
    pub beta_sigma: f64,
    pub ibp: IbpParams,
}

impl ModelState {
    pub fn k(&self) -> usize {
        self.a.k()
    }

    pub fn bands(&self) -> usize {
        self.a.bands()
    }

    pub fn pixels(&self) -> usize {
        self.s.nrows()
    }

    /// Check all structural invariants: shared K, binary A, nonnegative W,
    /// simplex rows of S (within `tol`), positive variance.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let k = self.a.k();
        if self.w.nrows() != k || self.s.ncols() != k {
            return Err(Error::Contract(format!(
                "inconsistent K: A has {k} rows, W has {}, S has {} columns",
                self.w.nrows(),
                self.s.ncols()
            )));
        }
        if self.w.ncols() != self.a.bands() {
            return Err(Error::Contract(format!(
                "W has {} bands, A has {}",
                self.w.ncols(),
                self.a.bands()
            )));
        }
        if self.w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract("W must be nonnegative and finite".into()));
        }
        if !(self.sigma_z2 > 0.0) || !self.sigma_z2.is_finite() {
            return Err(Error::Contract(format!(
                "sigma_z2 must be positive, got {}",
                self.sigma_z2
            )));
        }
        self.ibp.validate()?;
        if k > 0 {
            for (n, row) in self.s.outer_iter().enumerate() {
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > tol {
                    return Err(Error::Contract(format!(
                        "abundance row {n} sums to {sum}"
                    )));
                }
                if row.iter().any(|&v| v < 0.0) {
                    return Err(Error::Contract(format!(
                        "abundance row {n} has a negative entry"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Endmember matrix `F = A (hadamard) W`.
    pub fn endmembers(&self) -> Array2<f64> {
        let (k, d) = (self.k(), self.bands());
        let mut f = Array2::<f64>::zeros((k, d));
        for ki in 0..k {
            for di in 0..d {
                f[(ki, di)] = self.a.get(ki, di) as f64 * self.w[(ki, di)];
            }
        }
        f
    }

    /// Remove features whose activation row is all zero, dropping the
    /// matching W rows and S columns, and renormalize abundance rows so
    /// they stay on the simplex. Returns the number of removed features.
    pub fn cleanup_zero_rows(&mut self) -> usize {
        let dead = self.a.remove_zero_rows();
        if dead.is_empty() {
            return 0;
        }
        let keep: Vec<usize> = (0..self.w.nrows()).filter(|i| !dead.contains(i)).collect();
        self.w = self.w.select(ndarray::Axis(0), &keep);
        self.s = self.s.select(ndarray::Axis(1), &keep);
        if self.s.ncols() > 0 {
            for mut row in self.s.outer_iter_mut() {
                let sum: f64 = row.sum();
                if sum > 0.0 {
                    row.mapv_inplace(|v| v / sum);
                } else {
                    let uniform = 1.0 / row.len() as f64;
                    row.fill(uniform);
                }
            }
        }
        dead.len()
    }
}

/// Tempered Gaussian log likelihood of the whole image.
pub fn log_likelihood(image: &ObservedImage, state: &ModelState, temperature: f64) -> Result<f64> {
    let (n, d) = image.z.dim();
    if state.bands() != d || state.pixels() != n {
        return Err(Error::Contract(format!(
            "likelihood dimension mismatch: image {n}x{d}, state {} pixels x {} bands",
            state.pixels(),
            state.bands()
        )));
    }
    let f = state.endmembers();
    let recon = state.s.dot(&f);
    let mut rss = 0.0;
    for (z, r) in image.z.iter().zip(recon.iter()) {
        let e = z - r;
        rss += e * e;
    }
    let var = temperature * state.sigma_z2;
    let nd = (n * d) as f64;
    Ok(-0.5 * nd * (2.0 * std::f64::consts::PI * var).ln() - rss / (2.0 * var))
}

/// Distance prior on the weight rows: `-gamma_w * sum_k ||w_k - wbar||^2`
/// with the positivity indicator, unnormalized.
pub fn log_prior_weights(w: &Array2<f64>, gamma_w: f64) -> f64 {
    if w.iter().any(|&v| v < 0.0) {
        return f64::NEG_INFINITY;
    }
    let k = w.nrows();
    if k == 0 {
        return 0.0;
    }
    let mean = w.mean_axis(ndarray::Axis(0)).expect("nonempty W");
    let mut total = 0.0;
    for row in w.outer_iter() {
        for (v, m) in row.iter().zip(mean.iter()) {
            let dlt = v - m;
            total += dlt * dlt;
        }
    }
    -gamma_w * total
}

/// Unnormalized tempered log posterior (Eq. of the joint factorization).
/// The uniform Dirichlet prior on S contributes a constant and is dropped;
/// simplex or positivity violations yield negative infinity.
pub fn log_posterior(
    image: &ObservedImage,
    state: &ModelState,
    cfg: &HyperConfig,
    temperature: f64,
) -> Result<f64> {
    if state.k() > 0 {
        for row in state.s.outer_iter() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&v| v < 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
        }
    }
    if !(state.sigma_z2 > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let ll = log_likelihood(image, state, temperature)?;
    let lp_sigma = ln_inv_gamma_pdf(state.sigma_z2, state.alpha_sigma, state.beta_sigma);
    let lp_w = log_prior_weights(&state.w, cfg.gamma_w);
    let lp_a = ibp::log_prob_activations(&state.a, &state.ibp)?;
    let lp_hypers = ln_gamma_pdf(
        state.alpha_sigma,
        cfg.h_alpha_sigma.shape,
        cfg.h_alpha_sigma.rate,
    ) + ln_gamma_pdf(
        state.beta_sigma,
        cfg.h_beta_sigma.shape,
        cfg.h_beta_sigma.rate,
    ) + ln_gamma_pdf(state.ibp.alpha_a, cfg.h_alpha_a.shape, cfg.h_alpha_a.rate)
        + ln_gamma_pdf(state.ibp.beta_a, cfg.h_beta_a.shape, cfg.h_beta_a.rate);
    Ok(ll + lp_sigma + lp_w + lp_a + lp_hypers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::array;
    use rand::Rng;

    fn tiny_state(a_rows: Vec<Vec<u8>>, w: Array2<f64>, s: Array2<f64>) -> ModelState {
        let bands = w.ncols();
        ModelState {
            a: ActivationMatrix::new(a_rows, bands).unwrap(),
            w,
            s,
            sigma_z2: 1.0,
            alpha_sigma: 1.0,
            beta_sigma: 1.0,
            ibp: IbpParams {
                alpha_a: 1.0,
                beta_a: 1.0,
                h_alpha_a: GammaHyper::new(1.0, 1.0),
                h_beta_a: GammaHyper::new(1.0, 10.0),
            },
        }
    }

    #[test]
    fn endmembers_is_elementwise_product() {
        let st = tiny_state(
            vec![vec![1, 0]],
            array![[3.0, 4.0]],
            array![[1.0]],
        );
        assert_eq!(st.endmembers(), array![[3.0, 0.0]]);

        let all_on = tiny_state(vec![vec![1, 1]], array![[3.0, 4.0]], array![[1.0]]);
        assert_eq!(all_on.endmembers(), array![[3.0, 4.0]]);

        let all_off = tiny_state(vec![vec![0, 0]], array![[3.0, 4.0]], array![[1.0]]);
        assert_eq!(all_off.endmembers(), array![[0.0, 0.0]]);
    }

    #[test]
    fn zero_residual_log_likelihood_is_gaussian_normalizer() {
        // N = 1, D = 1 is below the image minimum, so build the 1x2 variant
        // and check the closed form.
        let st = tiny_state(vec![vec![1, 1]], array![[0.5, 0.25]], array![[1.0]]);
        let z = st.s.dot(&st.endmembers());
        let image = ObservedImage::from_matrix(z).unwrap();
        let ll = log_likelihood(&image, &st, 1.0).unwrap();
        let want = -(2.0f64 * std::f64::consts::PI).ln(); // -(ND/2) ln(2 pi), ND = 2
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn doubling_temperature_at_zero_residual_shifts_by_half_nd_ln2() {
        let st = tiny_state(vec![vec![1, 1]], array![[0.5, 0.25]], array![[1.0]]);
        let image = ObservedImage::from_matrix(st.s.dot(&st.endmembers())).unwrap();
        let l1 = log_likelihood(&image, &st, 1.0).unwrap();
        let l2 = log_likelihood(&image, &st, 2.0).unwrap();
        let nd = 2.0;
        assert!((l2 - l1 + (nd / 2.0) * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_per_element_brute_force() {
        let mut rng = RngStream::new(31, 0);
        for _ in 0..20 {
            let (n, d, k) = (3, 4, 2);
            let a_rows: Vec<Vec<u8>> = (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(0..2) as u8).collect())
                .collect();
            let w = Array2::from_shape_fn((k, d), |_| rng.random::<f64>());
            let mut s = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() + 0.01);
            for mut row in s.outer_iter_mut() {
                let sum: f64 = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            let mut st = tiny_state(a_rows, w, s);
            st.sigma_z2 = 0.3 + rng.random::<f64>();
            let z = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
            let image = ObservedImage::from_matrix(z.clone()).unwrap();
            let t = 1.0 + rng.random::<f64>() * 3.0;

            let f = st.endmembers();
            let var = t * st.sigma_z2;
            let mut brute = 0.0;
            for ni in 0..n {
                for di in 0..d {
                    let mut mu = 0.0;
                    for ki in 0..k {
                        mu += st.s[(ni, ki)] * f[(ki, di)];
                    }
                    let e = z[(ni, di)] - mu;
                    brute += -0.5 * (2.0 * std::f64::consts::PI * var).ln()
                        - e * e / (2.0 * var);
                }
            }
            let got = log_likelihood(&image, &st, t).unwrap();
            assert!((got - brute).abs() < 1e-12, "got {got}, brute {brute}");
        }
    }

    #[test]
    fn log_likelihood_decomposes_over_pixel_partitions() {
        let mut rng = RngStream::new(37, 0);
        let (n, d, k) = (6, 3, 2);
        let a_rows: Vec<Vec<u8>> = (0..k).map(|_| vec![1u8; d]).collect();
        let w = Array2::from_shape_fn((k, d), |_| rng.random::<f64>());
        let mut s = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() + 0.01);
        for mut row in s.outer_iter_mut() {
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let st = tiny_state(a_rows, w, s.clone());
        let z = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
        let whole = log_likelihood(
            &ObservedImage::from_matrix(z.clone()).unwrap(),
            &st,
            1.0,
        )
        .unwrap();

        let mut parts = 0.0;
        for (rows, srows) in [(0..3, 0..3), (3..6, 3..6)] {
            let z_part = z.slice(ndarray::s![rows.clone(), ..]).to_owned();
            let s_part = s.slice(ndarray::s![srows, ..]).to_owned();
            let st_part = ModelState {
                s: s_part,
                ..st.clone()
            };
            parts += log_likelihood(
                &ObservedImage::from_matrix(z_part).unwrap(),
                &st_part,
                1.0,
            )
            .unwrap();
        }
        assert!((whole - parts).abs() < 1e-10);
    }

    #[test]
    fn weight_prior_examples() {
        // K = 1: the row equals the mean.
        assert_eq!(log_prior_weights(&array![[0.3, 0.9]], 100.0), 0.0);
        // Identical rows.
        assert_eq!(
            log_prior_weights(&array![[0.5, 0.2], [0.5, 0.2]], 100.0),
            0.0
        );
        // Any negative entry hits the positivity indicator.
        assert_eq!(
            log_prior_weights(&array![[0.5, -0.01]], 100.0),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_posterior_is_sum_of_components() {
        let cfg = HyperConfig::default();
        let mut rng = RngStream::new(41, 0);
        for _ in 0..30 {
            let (n, d, k) = (3, 4, 2);
            let a_rows: Vec<Vec<u8>> = (0..k)
                .map(|_| {
                    let mut row: Vec<u8> =
                        (0..d).map(|_| rng.random_range(0..2) as u8).collect();
                    if row.iter().all(|&v| v == 0) {
                        row[0] = 1;
                    }
                    row
                })
                .collect();
            let w = Array2::from_shape_fn((k, d), |_| rng.random::<f64>());
            let mut s = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() + 0.01);
            for mut row in s.outer_iter_mut() {
                let sum: f64 = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            let mut st = tiny_state(a_rows, w, s);
            st.sigma_z2 = 0.5 + rng.random::<f64>();
            st.alpha_sigma = 0.5 + rng.random::<f64>();
            st.beta_sigma = 0.5 + rng.random::<f64>();
            st.ibp.alpha_a = 0.5 + rng.random::<f64>();
            st.ibp.beta_a = 0.5 + rng.random::<f64>();
            let z = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
            let image = ObservedImage::from_matrix(z).unwrap();

            let got = log_posterior(&image, &st, &cfg, 1.0).unwrap();
            let sum = log_likelihood(&image, &st, 1.0).unwrap()
                + ln_inv_gamma_pdf(st.sigma_z2, st.alpha_sigma, st.beta_sigma)
                + log_prior_weights(&st.w, cfg.gamma_w)
                + ibp::log_prob_activations(&st.a, &st.ibp).unwrap()
                + ln_gamma_pdf(st.alpha_sigma, 1.0, 1.0)
                + ln_gamma_pdf(st.beta_sigma, 1.0, 1.0)
                + ln_gamma_pdf(st.ibp.alpha_a, 1.0, 1.0)
                + ln_gamma_pdf(st.ibp.beta_a, 1.0, 10.0);
            assert!((got - sum).abs() < 1e-10, "got {got}, sum {sum}");
        }
    }

    #[test]
    fn smaller_residual_increases_log_posterior() {
        let cfg = HyperConfig::default();
        let st = tiny_state(
            vec![vec![1, 1]],
            array![[0.5, 0.25]],
            array![[1.0], [1.0]],
        );
        let target = st.s.dot(&st.endmembers());
        let close = ObservedImage::from_matrix(&target + 0.01).unwrap();
        let far = ObservedImage::from_matrix(&target + 0.3).unwrap();
        let lp_close = log_posterior(&close, &st, &cfg, 1.0).unwrap();
        let lp_far = log_posterior(&far, &st, &cfg, 1.0).unwrap();
        assert!(lp_close > lp_far);
    }

    #[test]
    fn off_simplex_state_has_neg_inf_posterior() {
        let cfg = HyperConfig::default();
        let st = tiny_state(
            vec![vec![1, 1], vec![1, 0]],
            array![[0.5, 0.25], [0.1, 0.2]],
            array![[0.5, 0.6]],
        );
        let image = ObservedImage::from_matrix(array![[0.1, 0.2]]).unwrap();
        assert_eq!(
            log_posterior(&image, &st, &cfg, 1.0).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn temperature_one_recovers_untempered_posterior() {
        let cfg = HyperConfig::default();
        let st = tiny_state(vec![vec![1, 1]], array![[0.5, 0.25]], array![[1.0]]);
        let image = ObservedImage::from_matrix(array![[0.4, 0.3]]).unwrap();
        let lp = log_posterior(&image, &st, &cfg, 1.0).unwrap();
        let ll = log_likelihood(&image, &st, 1.0).unwrap();
        let lp_manual = ll
            + ln_inv_gamma_pdf(1.0, 1.0, 1.0)
            + ibp::log_prob_activations(&st.a, &st.ibp).unwrap()
            + ln_gamma_pdf(1.0, 1.0, 1.0) * 3.0
            + ln_gamma_pdf(1.0, 1.0, 10.0);
        assert!((lp - lp_manual).abs() < 1e-12);
    }

    #[test]
    fn observed_image_validation() {
        assert!(ObservedImage::from_matrix(array![[1.0]]).is_err()); // D < 2
        assert!(ObservedImage::from_matrix(array![[1.0, f64::NAN]]).is_err());
        assert!(ObservedImage::new(array![[1.0, 2.0]], 2, 1).is_err()); // bad geometry
    }

    #[test]
    fn cleanup_removes_dead_feature_and_renormalizes() {
        let mut st = tiny_state(
            vec![vec![1, 1], vec![0, 0]],
            array![[0.5, 0.25], [0.9, 0.9]],
            array![[0.75, 0.25], [0.5, 0.5]],
        );
        let removed = st.cleanup_zero_rows();
        assert_eq!(removed, 1);
        assert_eq!(st.k(), 1);
        assert_eq!(st.w.nrows(), 1);
        assert_eq!(st.s.ncols(), 1);
        for row in st.s.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!(st.validate(1e-9).is_ok());
    }
}
