//! Preferred-duration controller.
//!
//! T starts at the step size Δ and grows by Δ whenever the statistical
//! utility collected over the most recent window of W rounds falls below the
//! window before it. The check runs once per window and only after two full
//! windows of history exist.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacerState {
    /// Preferred round duration T in seconds.
    pub preferred_duration: f64,
    /// Achieved statistical utility per round; index r-1 holds round r.
    pub utility_history: Vec<f64>,
}

impl PacerState {
    pub fn new(initial_duration: f64) -> Self {
        Self {
            preferred_duration: initial_duration,
            utility_history: Vec::new(),
        }
    }

    /// Runs the pacer at the start of `round`; returns true when T grew.
    pub fn tick(&mut self, round: u64, window: usize, step: f64) -> bool {
        let next = pacer_tick(&self.utility_history, round, window, self.preferred_duration, step);
        let grew = next > self.preferred_duration;
        self.preferred_duration = next;
        grew
    }
}

/// Returns the preferred duration for `round`, given history for rounds
/// 1..round-1. Unchanged until two full windows exist, and evaluated only on
/// window boundaries.
pub fn pacer_tick(history: &[f64], round: u64, window: usize, preferred: f64, step: f64) -> f64 {
    let completed = round.saturating_sub(1) as usize;
    if window == 0 || completed < 2 * window || completed % window != 0 || history.len() < completed {
        return preferred;
    }
    let older: f64 = history[completed - 2 * window..completed - window].iter().sum();
    let recent: f64 = history[completed - window..completed].iter().sum();
    if older > recent {
        preferred + step
    } else {
        preferred
    }
}
