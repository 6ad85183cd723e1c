//! Parallel tempering: state swaps between adjacent chains and the cooling
//! schedule.

use rand::Rng;

use crate::error::Result;
use crate::model::{log_likelihood, ObservedImage};
use crate::rng::RngStream;

use super::TemperedEnsemble;

/// Propose swapping the states of every adjacent chain pair `(i, i+1)`,
/// accepting with probability
/// `min(1, exp[(1/T_i - 1/T_{i+1}) (l_{i+1} - l_i)])`
/// where `l_j` is the untempered log likelihood of chain j's state.
/// Returns the number of accepted swaps.
pub fn pt_swap(
    ensemble: &mut TemperedEnsemble,
    image: &ObservedImage,
    rng: &mut RngStream,
) -> Result<usize> {
    let n = ensemble.chains.len();
    if n < 2 {
        return Ok(0);
    }
    let mut log_liks = Vec::with_capacity(n);
    for chain in &ensemble.chains {
        log_liks.push(log_likelihood(image, &chain.state, 1.0)?);
    }
    let mut accepted = 0;
    for i in 0..(n - 1) {
        let t_lo = ensemble.chains[i].temperature;
        let t_hi = ensemble.chains[i + 1].temperature;
        let log_ratio = (1.0 / t_lo - 1.0 / t_hi) * (log_liks[i + 1] - log_liks[i]);
        if rng.random::<f64>().ln() < log_ratio {
            let (left, right) = ensemble.chains.split_at_mut(i + 1);
            std::mem::swap(&mut left[i].state, &mut right[0].state);
            log_liks.swap(i, i + 1);
            accepted += 1;
        }
    }
    Ok(accepted)
}

/// Cool every chain above the base of the ladder: `T_i <- max(1, c * T_i)`
/// for `i >= 1`; chain 0 stays at temperature 1.
pub fn cool(ensemble: &mut TemperedEnsemble, cooling_factor: f64) {
    for chain in ensemble.chains.iter_mut().skip(1) {
        chain.temperature = (cooling_factor * chain.temperature).max(1.0);
    }
}
