use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metastore::{ClipPolicy, StoreConfig};

/// Which client-side quantity feeds the statistical utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    /// |B|·RMS of per-sample training losses.
    #[default]
    LossBased,
    /// Accumulated squared norm of per-batch weight updates.
    GradientNormBatches,
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid selector config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub exploration_factor: f64,
    pub exploration_decay: f64,
    pub exploration_floor: f64,
    /// Exponent α of the straggler penalty.
    pub straggler_penalty: f64,
    /// Pacer step Δ in seconds; also the initial preferred duration.
    pub pacer_step: f64,
    /// Pacer window W in rounds.
    pub pacer_window: usize,
    /// Cut-off confidence c, in percent.
    pub cutoff_confidence: f64,
    pub clip_percentile: f64,
    pub blacklist_threshold: u32,
    pub blacklist_max_fraction: f64,
    pub fairness_weight: f64,
    pub utility_mode: UtilityMode,
    /// Noise σ as a multiple of the mean statistical utility.
    pub noise_epsilon: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            exploration_factor: 0.9,
            exploration_decay: 0.98,
            exploration_floor: 0.2,
            straggler_penalty: 2.0,
            pacer_step: 10.0,
            pacer_window: 20,
            cutoff_confidence: 95.0,
            clip_percentile: 95.0,
            blacklist_threshold: 10,
            blacklist_max_fraction: 0.3,
            fairness_weight: 0.0,
            utility_mode: UtilityMode::LossBased,
            noise_epsilon: 0.0,
        }
    }
}

fn check(ok: bool, field: &'static str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError {
            field,
            reason: reason.to_string(),
        })
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            (0.0..=1.0).contains(&self.exploration_factor),
            "exploration_factor",
            "must lie in [0, 1]",
        )?;
        check(
            self.exploration_decay > 0.0 && self.exploration_decay <= 1.0,
            "exploration_decay",
            "must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.exploration_floor),
            "exploration_floor",
            "must lie in [0, 1]",
        )?;
        check(
            self.straggler_penalty >= 0.0 && self.straggler_penalty.is_finite(),
            "straggler_penalty",
            "must be a finite value >= 0",
        )?;
        check(
            self.pacer_step > 0.0 && self.pacer_step.is_finite(),
            "pacer_step",
            "must be positive",
        )?;
        check(self.pacer_window >= 1, "pacer_window", "must be at least 1")?;
        check(
            (0.0..=100.0).contains(&self.cutoff_confidence),
            "cutoff_confidence",
            "must lie in [0, 100]",
        )?;
        check(
            self.clip_percentile > 0.0 && self.clip_percentile <= 100.0,
            "clip_percentile",
            "must lie in (0, 100]",
        )?;
        check(
            self.blacklist_threshold >= 1,
            "blacklist_threshold",
            "must be at least 1",
        )?;
        check(
            (0.0..=1.0).contains(&self.blacklist_max_fraction),
            "blacklist_max_fraction",
            "must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.fairness_weight),
            "fairness_weight",
            "must lie in [0, 1]",
        )?;
        check(
            self.noise_epsilon >= 0.0 && self.noise_epsilon.is_finite(),
            "noise_epsilon",
            "must be a finite value >= 0",
        )
    }

    /// Exploration factor in effect at `round` (1-based).
    pub fn exploration_at(&self, round: u64) -> f64 {
        let start = self.exploration_factor;
        if start <= self.exploration_floor {
            return start;
        }
        let steps = round.saturating_sub(1).min(i32::MAX as u64) as i32;
        (start * self.exploration_decay.powi(steps)).max(self.exploration_floor)
    }

    /// Metastore settings implied by this selector configuration.
    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            blacklist_threshold: self.blacklist_threshold,
            blacklist_max_fraction: self.blacklist_max_fraction,
            clip: ClipPolicy::Percentile(self.clip_percentile),
        }
    }
}
