//! Testing-time participant selection.
//!
//! Two query kinds are served: how many randomly chosen participants bound
//! the deviation of the sampled data from the global population, and which
//! participants (and how many samples from each category) satisfy an exact
//! categorical preference in the least testing time.

pub mod cover;
pub mod estimate;
pub mod exact;
mod flow;
pub mod io;
pub mod query;

pub use cover::{greedy_cover, CoverError};
pub use estimate::{estimate_participant_count, verify_bound_montecarlo, DeviationQuery, EstimateError};
pub use exact::{exact_milp, exact_milp_with_limits, ExactLimits};
pub use query::{
    duration_of, representative_preference, validate_assignment, Assignment, ClientAssignment, ClientProfile,
    ConstraintViolation, DistributionQuery,
};
