//! Guided participant selection for federated learning.
//!
//! - [`metastore`]: per-client metadata fed by round feedback, checkpointable.
//! - [`training`]: utility-guided exploration-exploitation selection with a
//!   pacer that trades round speed against statistical utility.
//! - [`testing`]: participant counts for deviation targets, and
//!   distribution-enforcing assignments (greedy cover plus an exact solver).
//! - [`workload`]: synthetic non-IID populations and device traces.
//! - [`sim`]: a discrete-event federated training simulator.

pub mod metastore;
pub mod rng;
pub mod sim;
pub mod testing;
pub mod training;
pub mod workload;

pub use metastore::{ClientId, ClientRecord, MetaStore, RoundFeedback};
