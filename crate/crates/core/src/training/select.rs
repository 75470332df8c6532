//! Exploration-exploitation participant selection.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::SelectorConfig;
use super::sampling::weighted_without_replacement;
use super::utility::{perturb, staleness_bonus, system_factor};
use crate::metastore::{ClientId, ClientRecord};
use crate::rng::{stream_rng, Stream};

/// How one explored client's final utility was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    pub client_id: ClientId,
    pub stat_component: f64,
    pub staleness_bonus: f64,
    pub system_factor: f64,
    pub fairness_component: f64,
    pub final_utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub round: u64,
    pub participants: Vec<ClientId>,
    /// Participants drawn from the explored pool.
    pub exploited: usize,
    /// Participants drawn from the unexplored pool.
    pub explored: usize,
    pub exploration_factor: f64,
    pub breakdowns: Vec<UtilityBreakdown>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no selectable clients")]
    NoFeasibleClients,
    #[error("participant count must be at least 1")]
    ZeroCount,
    #[error("round must be at least 1")]
    ZeroRound,
}

#[derive(Debug, Clone)]
pub struct TrainingSelector {
    config: SelectorConfig,
}

impl TrainingSelector {
    pub fn new(config: SelectorConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.config
    }

    /// Final utilities for the explored, non-blacklisted `candidates`,
    /// in client-id order.
    pub fn utilities(
        &self,
        candidates: &[&ClientRecord],
        round: u64,
        preferred_duration: f64,
        seed: u64,
    ) -> Vec<UtilityBreakdown> {
        let cfg = &self.config;
        let mut explored: Vec<&ClientRecord> = candidates
            .iter()
            .copied()
            .filter(|r| r.explored && !r.blacklisted)
            .collect();
        explored.sort_by_key(|r| r.client_id);
        if explored.is_empty() {
            return Vec::new();
        }

        let sigma = if cfg.noise_epsilon > 0.0 {
            let mean = explored.iter().map(|r| r.stat_utility).sum::<f64>() / explored.len() as f64;
            cfg.noise_epsilon * mean
        } else {
            0.0
        };

        let mut rows: Vec<UtilityBreakdown> = explored
            .iter()
            .map(|r| {
                let stat = if sigma > 0.0 {
                    let mut rng = stream_rng(seed, Stream::Noise, round, r.client_id.0);
                    perturb(r.stat_utility, sigma, &mut rng)
                } else {
                    r.stat_utility
                };
                let bonus = staleness_bonus(round.max(r.last_round), r.last_round.max(1)).unwrap_or(0.0);
                let duration = r.duration.or(r.speed_hint).unwrap_or(preferred_duration);
                let sys = system_factor(preferred_duration, duration, cfg.straggler_penalty);
                UtilityBreakdown {
                    client_id: r.client_id,
                    stat_component: stat,
                    staleness_bonus: bonus,
                    system_factor: sys,
                    fairness_component: 0.0,
                    final_utility: (stat + bonus) * sys,
                }
            })
            .collect();

        let f = cfg.fairness_weight;
        if f > 0.0 {
            let max_count = explored.iter().map(|r| r.times_selected).max().unwrap_or(0);
            let max_util = rows.iter().map(|b| b.final_utility).fold(0.0, f64::max);
            for (row, rec) in rows.iter_mut().zip(&explored) {
                let demand = (max_count - rec.times_selected) as f64;
                let fairness = if max_count > 0 {
                    demand / max_count as f64 * max_util
                } else {
                    0.0
                };
                row.fairness_component = fairness;
                row.final_utility = (1.0 - f) * row.final_utility + f * fairness;
            }
        }
        for row in &mut rows {
            row.final_utility = row.final_utility.max(0.0);
        }
        rows
    }

    /// Picks up to `count` distinct participants for `round`.
    pub fn select_participants(
        &self,
        candidates: &[&ClientRecord],
        count: usize,
        round: u64,
        preferred_duration: f64,
        seed: u64,
    ) -> Result<Selection, SelectError> {
        if count == 0 {
            return Err(SelectError::ZeroCount);
        }
        if round == 0 {
            return Err(SelectError::ZeroRound);
        }
        let mut unexplored: Vec<&ClientRecord> = candidates
            .iter()
            .copied()
            .filter(|r| !r.explored && !r.blacklisted)
            .collect();
        unexplored.sort_by_key(|r| r.client_id);
        let breakdowns = self.utilities(candidates, round, preferred_duration, seed);
        if breakdowns.is_empty() && unexplored.is_empty() {
            return Err(SelectError::NoFeasibleClients);
        }

        let epsilon = self.config.exploration_at(round);
        let exploit_target = ((1.0 - epsilon) * count as f64 + 1e-9).floor() as usize;
        let admitted = admit_by_cutoff(&breakdowns, exploit_target, self.config.cutoff_confidence);

        let mut rng = stream_rng(seed, Stream::Selection, round, 0);
        let mut chosen = vec![false; breakdowns.len()];
        let mut participants = Vec::with_capacity(count);

        let weights: Vec<f64> = admitted.iter().map(|&i| breakdowns[i].final_utility).collect();
        for pos in weighted_without_replacement(&weights, exploit_target, &mut rng) {
            let i = admitted[pos];
            chosen[i] = true;
            participants.push(breakdowns[i].client_id);
        }

        // Exploration by speed, absorbing any exploitation shortfall.
        let speed: Vec<Option<f64>> = unexplored.iter().map(|r| r.speed_hint.map(|d| 1.0 / d)).collect();
        let known: Vec<f64> = speed.iter().flatten().copied().collect();
        let fallback = if known.is_empty() {
            1.0
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        };
        let speed: Vec<f64> = speed.into_iter().map(|s| s.unwrap_or(fallback)).collect();
        let need = count - participants.len();
        let explored_n = need.min(unexplored.len());
        for pos in weighted_without_replacement(&speed, explored_n, &mut rng) {
            participants.push(unexplored[pos].client_id);
        }

        // Backfill from the rest of the explored pool.
        let need = count - participants.len();
        if need > 0 {
            let rest: Vec<usize> = (0..breakdowns.len()).filter(|&i| !chosen[i]).collect();
            let weights: Vec<f64> = rest.iter().map(|&i| breakdowns[i].final_utility).collect();
            for pos in weighted_without_replacement(&weights, need, &mut rng) {
                participants.push(breakdowns[rest[pos]].client_id);
            }
        }

        Ok(Selection {
            round,
            exploited: participants.len() - explored_n,
            explored: explored_n,
            participants,
            exploration_factor: epsilon,
            breakdowns,
        })
    }
}

/// Indices of clients whose utility exceeds `confidence`% of the
/// `target`-th highest utility.
fn admit_by_cutoff(rows: &[UtilityBreakdown], target: usize, confidence: f64) -> Vec<usize> {
    if target == 0 {
        return Vec::new();
    }
    if rows.len() <= target {
        return (0..rows.len()).collect();
    }
    let mut sorted: Vec<f64> = rows.iter().map(|b| b.final_utility).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = confidence / 100.0 * sorted[target - 1];
    (0..rows.len())
        .filter(|&i| threshold <= 0.0 || rows[i].final_utility > threshold)
        .collect()
}

/// Writes breakdown rows as delimited text, one row per considered client.
pub fn write_breakdowns<W: Write>(out: &mut W, round: u64, rows: &[UtilityBreakdown], header: bool) -> io::Result<()> {
    if header {
        writeln!(out, "round,client_id,stat_component,staleness_bonus,system_factor,fairness_component,final_utility")?;
    }
    for b in rows {
        writeln!(
            out,
            "{round},{},{},{},{},{},{}",
            b.client_id, b.stat_component, b.staleness_bonus, b.system_factor, b.fairness_component, b.final_utility
        )?;
    }
    Ok(())
}
