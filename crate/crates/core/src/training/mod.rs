//! Training-time participant selection.
//!
//! Client utility combines a loss-derived statistical term with a penalty for
//! clients slower than the preferred round duration. Selection splits each
//! round between utility-weighted exploitation of explored clients and
//! speed-weighted exploration of clients never seen before.

pub mod config;
pub mod pacer;
pub mod sampling;
pub mod select;
pub mod utility;

pub use config::{ConfigError, SelectorConfig, UtilityMode};
pub use pacer::{pacer_tick, PacerState};
pub use select::{SelectError, Selection, TrainingSelector, UtilityBreakdown};
pub use utility::{
    clip_cap, gradient_norm_utility, staleness_bonus, statistical_utility,
    statistical_utility_from_aggregate, system_factor, system_penalty, UtilityError,
};
