//! Discrete-event federated training.
//!
//! Each round invites ⌈overcommit·K⌉ available clients, lets the first K
//! finishers contribute to a federated average, and pushes their loss and
//! duration back into the metastore that drives the next selection.

mod corrupt;
mod model;

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metastore::{Checkpoint, ClientId, ClientRecord, MetaStore, RoundFeedback, StoreError};
use crate::rng::{stream_rng, Stream};
use crate::training::{
    gradient_norm_utility, statistical_utility, ConfigError, SelectorConfig, TrainingSelector, UtilityBreakdown,
    UtilityMode,
};
use crate::workload::SimWorld;

pub use corrupt::{corrupt_clients, Corruption};
pub use model::{EpochOutcome, LinearModel};

pub const SIM_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Random,
    Oort,
    OortNoPacer,
    OortNoSys,
    SpeedOnly,
    StatOnly,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Random,
        Policy::Oort,
        Policy::OortNoPacer,
        Policy::OortNoSys,
        Policy::SpeedOnly,
        Policy::StatOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Oort => "oort",
            Policy::OortNoPacer => "oort_no_pacer",
            Policy::OortNoSys => "oort_no_sys",
            Policy::SpeedOnly => "speed_only",
            Policy::StatOnly => "stat_only",
        }
    }

    fn guided(self) -> bool {
        !matches!(self, Policy::Random | Policy::SpeedOnly)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Uniform,
    SampleWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// K: updates aggregated per round.
    pub participants: usize,
    /// Invitation multiplier over K.
    pub overcommit: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Bytes moved per round by each participant.
    pub model_bytes: f64,
    pub aggregation: Aggregation,
    /// When set, the pacer step is this quantile of the clients' expected
    /// round durations instead of `selector.pacer_step`.
    pub pacer_step_quantile: Option<f64>,
    /// Rounds between checkpoints when a checkpoint path is attached.
    pub checkpoint_every: u64,
    pub selector: SelectorConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            participants: 50,
            overcommit: 1.3,
            learning_rate: 0.002,
            batch_size: 32,
            model_bytes: 4.0e6,
            aggregation: Aggregation::Uniform,
            pacer_step_quantile: Some(0.2),
            checkpoint_every: 10,
            selector: SelectorConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError {
                    field,
                    reason: reason.to_string(),
                })
            }
        };
        check(self.participants >= 1, "participants", "must be at least 1")?;
        check(self.overcommit >= 1.0 && self.overcommit.is_finite(), "overcommit", "must be >= 1")?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "must be positive",
        )?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(self.model_bytes >= 0.0 && self.model_bytes.is_finite(), "model_bytes", "must be >= 0")?;
        if let Some(q) = self.pacer_step_quantile {
            check(q > 0.0 && q <= 1.0, "pacer_step_quantile", "must lie in (0, 1]")?;
        }
        check(self.checkpoint_every >= 1, "checkpoint_every", "must be at least 1")?;
        self.selector.validate()
    }

    /// Settings used with [`PopulationSpec::canonical`](crate::workload::PopulationSpec::canonical).
    /// Each client is invited about 15 times in 300 rounds there, so the
    /// blacklist threshold is raised to keep it an outlier filter.
    pub fn canonical() -> Self {
        Self {
            selector: SelectorConfig {
                blacklist_threshold: 50,
                ..SelectorConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn invitations(&self) -> usize {
        (self.overcommit * self.participants as f64 - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleterReport {
    pub client_id: ClientId,
    pub samples: usize,
    /// Statistical utility reported as feedback.
    pub utility: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round: u64,
    pub invited: Vec<ClientId>,
    pub invited_durations: Vec<f64>,
    /// First finishers in completion order.
    pub completers: Vec<CompleterReport>,
    pub wall_time: f64,
    pub test_accuracy: f64,
    pub preferred_duration: f64,
    /// Completer models before averaging, kept only when requested.
    pub updates: Vec<LinearModel>,
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub wall_clock_s: f64,
    pub test_accuracy: f64,
    pub mean_utility: f64,
    #[serde(rename = "T")]
    pub preferred_duration: f64,
    pub participants: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeToAccuracy {
    pub reached: bool,
    pub rounds: u64,
    pub wall_clock: f64,
    /// (round, wall clock, accuracy) after each round.
    pub trajectory: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCheckpoint {
    pub version: u32,
    pub policy: Policy,
    pub seed: u64,
    pub clock: f64,
    pub accuracy: f64,
    pub model: LinearModel,
    pub store: Checkpoint,
    pub records: Vec<RoundRecord>,
}

/// Expected per-round duration of a client from its device profile.
pub fn expected_duration(samples: usize, compute_latency: f64, bandwidth: f64, model_bytes: f64) -> f64 {
    samples as f64 * compute_latency + model_bytes / bandwidth
}

/// Nearest-rank quantile of a nonempty list.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub struct Simulation<'w> {
    world: &'w SimWorld,
    policy: Policy,
    config: SimConfig,
    seed: u64,
    selector: TrainingSelector,
    pacer_step: f64,
    durations: Vec<f64>,
    model: LinearModel,
    store: MetaStore,
    clock: f64,
    accuracy: f64,
    records: Vec<RoundRecord>,
    checkpoint_path: Option<PathBuf>,
    retain_updates: bool,
    record_breakdowns: bool,
    breakdowns: Vec<UtilityBreakdown>,
}

impl<'w> Simulation<'w> {
    pub fn new(world: &'w SimWorld, policy: Policy, config: SimConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let mut selector_cfg = config.selector.clone();
        if matches!(policy, Policy::OortNoSys | Policy::StatOnly) {
            selector_cfg.straggler_penalty = 0.0;
        }
        let durations: Vec<f64> = world
            .clients
            .iter()
            .map(|c| expected_duration(c.sample_count(), c.compute_latency, c.bandwidth, config.model_bytes))
            .collect();
        let pacer_step = match config.pacer_step_quantile {
            Some(q) if !durations.is_empty() => quantile(&durations, q),
            _ => selector_cfg.pacer_step,
        };
        let mut store_cfg = selector_cfg.store_config();
        if !policy.guided() {
            store_cfg.blacklist_threshold = u32::MAX;
        }
        let mut store = MetaStore::new(store_cfg, pacer_step);
        for (c, &d) in world.clients.iter().zip(&durations) {
            store.register(c.client_id, Some(d))?;
        }
        let model = LinearModel::zeros(world.class_count, world.feature_dim);
        let accuracy = model.accuracy(&world.test);
        Ok(Self {
            world,
            policy,
            config,
            seed,
            selector: TrainingSelector::new(selector_cfg),
            pacer_step,
            durations,
            model,
            store,
            clock: 0.0,
            accuracy,
            records: Vec::new(),
            checkpoint_path: None,
            retain_updates: false,
            record_breakdowns: false,
            breakdowns: Vec::new(),
        })
    }

    /// Rebuilds a simulation from a checkpoint taken over the same world and config.
    pub fn resume(world: &'w SimWorld, config: SimConfig, ck: SimCheckpoint) -> Result<Self, SimError> {
        if ck.version != SIM_CHECKPOINT_VERSION {
            return Err(SimError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut sim = Self::new(world, ck.policy, config, ck.seed)?;
        if ck.model.classes != world.class_count || ck.model.dim != world.feature_dim {
            return Err(SimError::Checkpoint("model shape does not match the world".into()));
        }
        sim.store.restore(ck.store)?;
        sim.model = ck.model;
        sim.clock = ck.clock;
        sim.accuracy = ck.accuracy;
        sim.records = ck.records;
        Ok(sim)
    }

    /// Writes a checkpoint to `path` every `checkpoint_every` rounds.
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    /// Keeps each round's completer models in the [`RoundResult`].
    pub fn retain_updates(&mut self, keep: bool) {
        self.retain_updates = keep;
    }

    /// Keeps the utility breakdowns of each guided selection.
    pub fn record_breakdowns(&mut self, keep: bool) {
        self.record_breakdowns = keep;
    }

    /// Breakdowns from the most recent round's selection, when recorded.
    pub fn last_breakdowns(&self) -> &[UtilityBreakdown] {
        &self.breakdowns
    }

    pub fn snapshot(&self) -> SimCheckpoint {
        SimCheckpoint {
            version: SIM_CHECKPOINT_VERSION,
            policy: self.policy,
            seed: self.seed,
            clock: self.clock,
            accuracy: self.accuracy,
            model: self.model.clone(),
            store: self.store.snapshot(),
            records: self.records.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), SimError> {
        let io_err = |source| SimError::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = serde_json::to_string(&self.snapshot()).map_err(|e| SimError::Checkpoint(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(io_err)?;
        std::fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load_checkpoint(path: &Path) -> Result<SimCheckpoint, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SimError::Checkpoint(e.to_string()))
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }
    pub fn round(&self) -> u64 {
        self.store.round()
    }
    pub fn clock(&self) -> f64 {
        self.clock
    }
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }
    pub fn model(&self) -> &LinearModel {
        &self.model
    }
    pub fn store(&self) -> &MetaStore {
        &self.store
    }
    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }
    pub fn pacer_step(&self) -> f64 {
        self.pacer_step
    }

    fn invite(&mut self, round: u64, preferred: f64) -> Vec<ClientId> {
        let available: Vec<usize> = self
            .world
            .clients
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let mut rng = stream_rng(self.seed, Stream::Availability, round, c.client_id.0);
                rng.random::<f64>() < c.availability
            })
            .map(|(n, _)| n)
            .collect();
        let want = self.config.invitations();
        match self.policy {
            Policy::Random => {
                let mut rng = stream_rng(self.seed, Stream::Selection, round, 1);
                let take = want.min(available.len());
                index::sample(&mut rng, available.len(), take)
                    .into_iter()
                    .map(|i| self.world.clients[available[i]].client_id)
                    .collect()
            }
            Policy::SpeedOnly => {
                let mut order = available;
                order.sort_by(|&a, &b| self.durations[a].total_cmp(&self.durations[b]).then(a.cmp(&b)));
                order.truncate(want);
                order.into_iter().map(|n| self.world.clients[n].client_id).collect()
            }
            _ => {
                let mut records: Vec<ClientRecord> = available
                    .iter()
                    .filter_map(|&n| self.store.get(self.world.clients[n].client_id))
                    .filter(|r| r.selectable())
                    .cloned()
                    .collect();
                if self.policy == Policy::StatOnly {
                    records.iter_mut().for_each(|r| r.speed_hint = None);
                }
                let view: Vec<&ClientRecord> = records.iter().collect();
                match self.selector.select_participants(&view, want, round, preferred, self.seed) {
                    Ok(sel) => {
                        if self.record_breakdowns {
                            self.breakdowns = sel.breakdowns;
                        }
                        sel.participants
                    }
                    Err(e) => {
                        log::warn!("round {round}: {e}");
                        Vec::new()
                    }
                }
            }
        }
    }

    pub fn run_round(&mut self) -> Result<RoundResult, SimError> {
        let round = self.store.begin_round();
        if self.policy.guided() && self.policy != Policy::OortNoPacer {
            let cfg = self.selector.config();
            let (window, step) = (cfg.pacer_window, self.pacer_step);
            self.store.pacer_mut().tick(round, window, step);
        }
        let preferred = self.store.pacer().preferred_duration;

        self.breakdowns.clear();
        let invited = self.invite(round, preferred);
        let k = self.config.participants;
        if invited.len() < k {
            log::info!("round {round}: only {} clients invited for K = {k}", invited.len());
        }
        let invited_durations: Vec<f64> = invited.iter().map(|id| self.durations[id.0 as usize]).collect();
        // Completion order; every invitee trains, the first K are aggregated.
        let mut order: Vec<usize> = (0..invited.len()).collect();
        order.sort_by(|&a, &b| invited_durations[a].total_cmp(&invited_durations[b]));

        let world = self.world;
        let global = &self.model;
        let cfg = &self.config;
        let mode = self.selector.config().utility_mode;
        let seed = self.seed;
        let mut trained: Vec<(LinearModel, CompleterReport)> = order
            .par_iter()
            .map(|&pos| {
                let client = &world.clients[invited[pos].0 as usize];
                let mut local = global.clone();
                let mut rng = stream_rng(seed, Stream::LocalTraining, client.client_id.0, round);
                let out = local.local_epoch(&client.features, &client.labels, cfg.learning_rate, cfg.batch_size, &mut rng);
                let utility = match mode {
                    UtilityMode::LossBased => statistical_utility(&out.sample_losses),
                    UtilityMode::GradientNormBatches => gradient_norm_utility(&out.update_sq_norms),
                };
                let report = CompleterReport {
                    client_id: client.client_id,
                    samples: client.sample_count(),
                    utility,
                    duration: invited_durations[pos],
                };
                (local, report)
            })
            .collect();

        let late = trained.split_off(trained.len().min(k));
        if !trained.is_empty() {
            let weights: Vec<f64> = match cfg.aggregation {
                Aggregation::Uniform => vec![1.0; trained.len()],
                Aggregation::SampleWeighted => trained.iter().map(|(_, r)| r.samples as f64).collect(),
            };
            self.model = federated_average(
                &trained.iter().map(|(m, _)| m).collect::<Vec<_>>(),
                &weights,
            );
        }
        let (updates, completers): (Vec<LinearModel>, Vec<CompleterReport>) = trained.into_iter().unzip();
        let updates = if self.retain_updates { updates } else { Vec::new() };
        let report = |r: &CompleterReport, completed: bool| RoundFeedback {
            client_id: r.client_id,
            agg_stat_value: r.utility,
            wall_duration: r.duration,
            round,
            completed,
        };
        let feedback: Vec<RoundFeedback> = completers
            .iter()
            .map(|r| report(r, true))
            .chain(late.iter().map(|(_, r)| report(r, false)))
            .collect();
        self.store.update_with_feedback(&feedback)?;

        let wall_time = completers.iter().map(|r| r.duration).fold(0.0, f64::max);
        self.clock += wall_time;
        self.accuracy = self.model.accuracy(&world.test);
        let mean_utility = if completers.is_empty() {
            0.0
        } else {
            completers.iter().map(|r| r.utility).sum::<f64>() / completers.len() as f64
        };
        self.records.push(RoundRecord {
            round,
            wall_clock_s: self.clock,
            test_accuracy: self.accuracy,
            mean_utility,
            preferred_duration: preferred,
            participants: completers.len(),
        });

        if let Some(path) = &self.checkpoint_path {
            if round % self.config.checkpoint_every == 0 {
                self.save_checkpoint(path)?;
            }
        }

        Ok(RoundResult {
            round,
            invited,
            invited_durations,
            completers,
            wall_time,
            test_accuracy: self.accuracy,
            preferred_duration: preferred,
            updates,
        })
    }

    /// Runs `rounds` more rounds.
    pub fn run(&mut self, rounds: u64) -> Result<(), SimError> {
        for _ in 0..rounds {
            self.run_round()?;
        }
        Ok(())
    }

    /// Runs until test accuracy reaches `target` or `max_rounds` rounds have
    /// been executed by this call.
    pub fn train_to_target(&mut self, target: f64, max_rounds: u64) -> Result<TimeToAccuracy, SimError> {
        let mut trajectory = Vec::new();
        let mut rounds = 0;
        while self.accuracy < target && rounds < max_rounds {
            let r = self.run_round()?;
            rounds += 1;
            trajectory.push((r.round, self.clock, r.test_accuracy));
        }
        Ok(TimeToAccuracy {
            reached: self.accuracy >= target,
            rounds,
            wall_clock: self.clock,
            trajectory,
        })
    }

    /// Variance of participation counts over non-blacklisted clients.
    pub fn participation_variance(&self) -> f64 {
        fairness_metrics(&self.store)
    }

    pub fn write_metrics<W: Write>(&self, out: W) -> io::Result<()> {
        write_metrics(out, &self.records)
    }
}

/// Weighted mean of client models.
pub fn federated_average(models: &[&LinearModel], weights: &[f64]) -> LinearModel {
    let first = models[0];
    let total: f64 = weights.iter().sum();
    let mut out = LinearModel::zeros(first.classes, first.dim);
    for (m, &w) in models.iter().zip(weights) {
        let share = w / total;
        for (o, v) in out.weights.iter_mut().zip(&m.weights) {
            *o += share * v;
        }
    }
    out
}

/// Population variance of participation counts.
pub fn participation_variance(counts: &[u32]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n
}

pub fn fairness_metrics(store: &MetaStore) -> f64 {
    let counts: Vec<u32> = store.selectable().map(|r| r.times_selected).collect();
    participation_variance(&counts)
}

pub fn write_metrics<W: Write>(out: W, records: &[RoundRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["round", "wall_clock_s", "test_accuracy", "mean_utility", "T", "participants"])?;
    }
    w.flush()
}
