//! Per-client metadata registry.
//!
//! The store is the single source the selectors read from. It ingests round
//! feedback, keeps the pacer state and the round counter, and can be
//! checkpointed to (and restored from) a versioned JSON document.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::training::pacer::PacerState;
use crate::training::utility::clip_cap;

/// Current checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u64);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Everything the selectors know about one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: ClientId,
    /// Latest (clipped) statistical utility.
    pub stat_utility: f64,
    /// Round of the most recent feedback; 0 before any.
    pub last_round: u64,
    /// Most recently observed round duration in seconds.
    pub duration: Option<f64>,
    /// Expected round duration inferred from device metadata, if known.
    pub speed_hint: Option<f64>,
    pub times_selected: u32,
    pub blacklisted: bool,
    /// True once any feedback has been recorded.
    pub explored: bool,
}

impl ClientRecord {
    fn new(client_id: ClientId, speed_hint: Option<f64>) -> Self {
        Self {
            client_id,
            stat_utility: 0.0,
            last_round: 0,
            duration: None,
            speed_hint,
            times_selected: 0,
            blacklisted: false,
            explored: false,
        }
    }

    pub fn selectable(&self) -> bool {
        !self.blacklisted
    }
}

/// One client's report for the round it just finished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundFeedback {
    pub client_id: ClientId,
    /// Aggregate loss-derived (or gradient-norm) utility of the trained samples.
    pub agg_stat_value: f64,
    /// Wall-clock completion time in seconds.
    pub wall_duration: f64,
    pub round: u64,
    /// False for a straggler whose update was discarded. Its report is
    /// recorded but does not count toward the round's achieved utility.
    #[serde(default = "completed_default")]
    pub completed: bool,
}

fn completed_default() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClipPolicy {
    Disabled,
    /// Nearest-rank percentile of the explored utility distribution.
    Percentile(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub blacklist_threshold: u32,
    /// Upper bound on the share of registered clients that may be blacklisted.
    pub blacklist_max_fraction: f64,
    pub clip: ClipPolicy,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            blacklist_threshold: 10,
            blacklist_max_fraction: 0.3,
            clip: ClipPolicy::Percentile(95.0),
        }
    }
}

/// Serialized form of the whole store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub round: u64,
    pub pacer: PacerState,
    pub clients: Vec<ClientRecord>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
    #[error("client {0} is already registered")]
    DuplicateClient(ClientId),
    #[error("stale feedback from client {client}: round {round}, current round {current}")]
    StaleFeedback {
        client: ClientId,
        round: u64,
        current: u64,
    },
    #[error("invalid feedback from client {client}: {reason}")]
    InvalidFeedback { client: ClientId, reason: String },
    #[error("invalid speed hint for client {0}")]
    InvalidHint(ClientId),
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaStore {
    config: StoreConfig,
    round: u64,
    pacer: PacerState,
    clients: BTreeMap<ClientId, ClientRecord>,
}

impl MetaStore {
    /// Creates an empty store whose pacer starts at `initial_duration` (T = Δ).
    pub fn new(config: StoreConfig, initial_duration: f64) -> Self {
        Self {
            config,
            round: 0,
            pacer: PacerState::new(initial_duration),
            clients: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn register(&mut self, id: ClientId, speed_hint: Option<f64>) -> Result<(), StoreError> {
        if let Some(h) = speed_hint {
            if !(h.is_finite() && h > 0.0) {
                return Err(StoreError::InvalidHint(id));
            }
        }
        if self.clients.contains_key(&id) {
            return Err(StoreError::DuplicateClient(id));
        }
        self.clients.insert(id, ClientRecord::new(id, speed_hint));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    /// Current round counter (0 before the first round starts).
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Opens the next round and returns its index.
    pub fn begin_round(&mut self) -> u64 {
        // Rounds without feedback still occupy a history slot.
        let done = self.round as usize;
        if self.pacer.utility_history.len() < done {
            self.pacer.utility_history.resize(done, 0.0);
        }
        self.round += 1;
        self.round
    }

    pub fn pacer(&self) -> &PacerState {
        &self.pacer
    }

    pub fn pacer_mut(&mut self) -> &mut PacerState {
        &mut self.pacer
    }

    pub fn get(&self, id: ClientId) -> Option<&ClientRecord> {
        self.clients.get(&id)
    }

    /// All records in client-id order, blacklisted ones included.
    pub fn records(&self) -> impl Iterator<Item = &ClientRecord> {
        self.clients.values()
    }

    /// Records visible to selection.
    pub fn selectable(&self) -> impl Iterator<Item = &ClientRecord> {
        self.clients.values().filter(|r| r.selectable())
    }

    pub fn blacklisted_count(&self) -> usize {
        self.clients.values().filter(|r| r.blacklisted).count()
    }

    /// Ingests one round of feedback. The batch is validated as a whole
    /// before anything is written, so a rejected batch leaves the store intact.
    pub fn update_with_feedback(&mut self, batch: &[RoundFeedback]) -> Result<usize, StoreError> {
        if batch.is_empty() {
            return Ok(0);
        }
        let mut seen = BTreeMap::new();
        for fb in batch {
            let rec = self
                .clients
                .get(&fb.client_id)
                .ok_or(StoreError::UnknownClient(fb.client_id))?;
            let stale = self.round == 0
                || fb.round != self.round
                || rec.last_round >= fb.round
                || seen.insert(fb.client_id, ()).is_some();
            if stale {
                return Err(StoreError::StaleFeedback {
                    client: fb.client_id,
                    round: fb.round,
                    current: self.round,
                });
            }
            if !(fb.agg_stat_value.is_finite() && fb.agg_stat_value >= 0.0) {
                return Err(StoreError::InvalidFeedback {
                    client: fb.client_id,
                    reason: format!("utility {} is not a nonnegative number", fb.agg_stat_value),
                });
            }
            if !(fb.wall_duration.is_finite() && fb.wall_duration > 0.0) {
                return Err(StoreError::InvalidFeedback {
                    client: fb.client_id,
                    reason: format!("duration {} is not positive", fb.wall_duration),
                });
            }
        }

        let cap = match self.config.clip {
            ClipPolicy::Disabled => f64::INFINITY,
            ClipPolicy::Fixed(c) => c,
            ClipPolicy::Percentile(p) => {
                let mut dist: Vec<f64> = self
                    .clients
                    .values()
                    .filter(|r| r.explored && !seen.contains_key(&r.client_id))
                    .map(|r| r.stat_utility)
                    .collect();
                dist.extend(batch.iter().map(|fb| fb.agg_stat_value));
                clip_cap(&dist, p)
            }
        };

        let limit = (self.config.blacklist_max_fraction * self.clients.len() as f64).floor() as usize;
        let mut blacklisted = self.blacklisted_count();
        let mut achieved = 0.0;
        for fb in batch {
            let rec = self.clients.get_mut(&fb.client_id).expect("validated above");
            rec.last_round = fb.round;
            rec.duration = Some(fb.wall_duration);
            rec.times_selected += 1;
            rec.stat_utility = fb.agg_stat_value.min(cap);
            rec.explored = true;
            if fb.completed {
                achieved += rec.stat_utility;
            }
            if !rec.blacklisted && rec.times_selected >= self.config.blacklist_threshold && blacklisted < limit {
                rec.blacklisted = true;
                blacklisted += 1;
            }
        }

        let slot = (self.round - 1) as usize;
        let history = &mut self.pacer.utility_history;
        if history.len() <= slot {
            history.resize(slot + 1, 0.0);
        }
        history[slot] += achieved;
        Ok(batch.len())
    }

    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            round: self.round,
            pacer: self.pacer.clone(),
            clients: self.clients.values().cloned().collect(),
        }
    }

    /// Replaces all in-memory state with the checkpoint's contents.
    pub fn restore(&mut self, checkpoint: Checkpoint) -> Result<(), StoreError> {
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(StoreError::UnsupportedVersion {
                found: checkpoint.version as u64,
            });
        }
        let mut clients = BTreeMap::new();
        for rec in checkpoint.clients {
            if !(rec.stat_utility.is_finite() && rec.stat_utility >= 0.0) {
                return Err(StoreError::CorruptCheckpoint(format!(
                    "client {} has invalid utility",
                    rec.client_id
                )));
            }
            if let Some(prev) = clients.insert(rec.client_id, rec) {
                return Err(StoreError::CorruptCheckpoint(format!(
                    "client {} appears twice",
                    prev.client_id
                )));
            }
        }
        self.round = checkpoint.round;
        self.pacer = checkpoint.pacer;
        self.clients = clients;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        fs::write(path, encode_checkpoint(&self.snapshot()))?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let text = fs::read_to_string(path)?;
        let ck = decode_checkpoint(&text)?;
        self.restore(ck)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> String {
    serde_json::to_string_pretty(ck).expect("checkpoint serializes")
}

/// Parses a checkpoint document, checking the version field before the body.
pub fn decode_checkpoint(text: &str) -> Result<Checkpoint, StoreError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| StoreError::CorruptCheckpoint(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| StoreError::CorruptCheckpoint("missing version field".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(StoreError::UnsupportedVersion { found: version });
    }
    serde_json::from_value(value).map_err(|e| StoreError::CorruptCheckpoint(e.to_string()))
}
