//! Per-client utility terms.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UtilityError {
    #[error("durations must be positive (preferred {preferred}, observed {observed})")]
    NonPositiveDuration { preferred: f64, observed: f64 },
    #[error("straggler penalty must be >= 0, got {0}")]
    NegativePenalty(f64),
    #[error("client never participated (last round 0)")]
    NeverParticipated,
    #[error("last round {last} is after current round {current}")]
    FutureRound { last: u64, current: u64 },
}

/// |B|·sqrt(mean of squared losses). An empty bin contributes nothing.
pub fn statistical_utility(sample_losses: &[f64]) -> f64 {
    let sum_sq: f64 = sample_losses.iter().map(|l| l * l).sum();
    statistical_utility_from_aggregate(sum_sq, sample_losses.len())
}

/// Same as [`statistical_utility`] from the client-side aggregate
/// (sum of squared losses, sample count).
pub fn statistical_utility_from_aggregate(sum_sq_loss: f64, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let n = count as f64;
    n * (sum_sq_loss / n).sqrt()
}

/// Accumulated squared norms of per-batch weight updates.
pub fn gradient_norm_utility(weight_delta_sq_norms: &[f64]) -> f64 {
    weight_delta_sq_norms.iter().sum()
}

/// The multiplicative system term (T/t)^(1(T<t)·α).
pub fn system_factor(preferred: f64, observed: f64, alpha: f64) -> f64 {
    if preferred < observed {
        (preferred / observed).powf(alpha)
    } else {
        1.0
    }
}

/// Applies the straggler penalty to utility `u`; non-stragglers are not rewarded.
pub fn system_penalty(u: f64, preferred: f64, observed: f64, alpha: f64) -> Result<f64, UtilityError> {
    if !(preferred > 0.0 && observed > 0.0) {
        return Err(UtilityError::NonPositiveDuration { preferred, observed });
    }
    if !(alpha >= 0.0) {
        return Err(UtilityError::NegativePenalty(alpha));
    }
    Ok(u * system_factor(preferred, observed, alpha))
}

/// sqrt(0.1·ln R / last_round): grows for clients left out for a while.
pub fn staleness_bonus(round: u64, last_round: u64) -> Result<f64, UtilityError> {
    if last_round == 0 {
        return Err(UtilityError::NeverParticipated);
    }
    if last_round > round {
        return Err(UtilityError::FutureRound {
            last: last_round,
            current: round,
        });
    }
    Ok((0.1 * (round as f64).ln() / last_round as f64).sqrt())
}

/// Nearest-rank percentile of `values`; no cap (infinity) when empty.
pub fn clip_cap(values: &[f64], percentile: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma`, floored at 0.
pub fn perturb<R: Rng + ?Sized>(value: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return value;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    (value + normal.sample(rng)).max(0.0)
}

/// Unfloored noise draw; used to check the perturbation is unbiased.
pub fn gaussian_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma is positive and finite").sample(rng)
}
