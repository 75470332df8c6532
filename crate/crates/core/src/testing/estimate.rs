//! Participant count for a deviation target, and its Monte-Carlo check.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

/// Request: how many participants keep |sample mean - population mean| < ε
/// with probability at least δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationQuery {
    /// Tolerance ε, in sample-count units.
    pub tolerance: f64,
    /// Confidence δ in (0, 1).
    pub confidence: f64,
    /// Number of feasible clients N.
    pub population: usize,
    /// Global minimum per-client sample count.
    pub min_count: f64,
    /// Global maximum per-client sample count.
    pub max_count: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("invalid deviation query: {0}")]
    InvalidQuery(String),
    #[error("participant count {requested} exceeds population {population}")]
    TooManyParticipants { requested: usize, population: usize },
    #[error("population has {found} clients, query declares {declared}")]
    PopulationMismatch { found: usize, declared: usize },
}

impl DeviationQuery {
    pub fn range(&self) -> f64 {
        self.max_count - self.min_count
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        let bad = |m: &str| Err(EstimateError::InvalidQuery(m.to_string()));
        if self.population == 0 {
            return bad("population must be at least 1");
        }
        if !(self.max_count > self.min_count) || !self.range().is_finite() {
            return bad("max count must exceed min count");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) || (1.0 - self.confidence) <= 0.0 {
            return bad("confidence must lie strictly between 0 and 1");
        }
        if !(self.tolerance >= 0.0) || !self.tolerance.is_finite() {
            return bad("tolerance must be a finite value >= 0");
        }
        Ok(())
    }
}

/// Smallest n with n >= (N+1) / (1 - 2N/ln(1-δ) · (ε/(max-min))²),
/// clamped to [1, N].
pub fn estimate_participant_count(q: &DeviationQuery) -> Result<usize, EstimateError> {
    q.validate()?;
    if q.tolerance <= 0.0 {
        return Ok(q.population);
    }
    let n_pop = q.population as f64;
    let ratio = q.tolerance / q.range();
    let log_miss = (1.0 - q.confidence).ln();
    let denom = 1.0 - (2.0 * n_pop / log_miss) * ratio * ratio;
    let bound = (n_pop + 1.0) / denom;
    let n = if bound.is_finite() { bound.ceil() } else { 1.0 };
    Ok((n.max(1.0) as usize).min(q.population))
}

/// Fraction of `trials` simple random samples (without replacement) of `n`
/// clients whose mean sample count deviates from the population mean by at
/// least ε.
pub fn verify_bound_montecarlo(
    q: &DeviationQuery,
    population: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<f64, EstimateError> {
    if population.len() != q.population {
        return Err(EstimateError::PopulationMismatch {
            found: population.len(),
            declared: q.population,
        });
    }
    if n == 0 || n > population.len() {
        return Err(EstimateError::TooManyParticipants {
            requested: n,
            population: population.len(),
        });
    }
    if trials == 0 {
        return Ok(0.0);
    }
    let mean = population.iter().sum::<f64>() / population.len() as f64;
    let mut rng = stream_rng(seed, Stream::MonteCarlo, n as u64, trials as u64);
    let mut violations = 0usize;
    for _ in 0..trials {
        let idx = sample(&mut rng, population.len(), n);
        let m = idx.iter().map(|i| population[i]).sum::<f64>() / n as f64;
        if (m - mean).abs() >= q.tolerance {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}
