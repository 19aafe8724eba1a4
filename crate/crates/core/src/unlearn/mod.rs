//! Pruning-based federated unlearning.
//!
//! Given the last round of client models and the set of clients to forget,
//! the server averages the two groups, ranks every dense/conv weight by
//! `(avg_malicious - avg_benign)^2 * |w_prev|`, zeroes the top fraction of
//! each layer in the benign average and lets the remaining clients recover
//! the model for a bounded number of rounds.

mod heuristic;
mod mask;
mod rate_limit;
mod recovery;

pub use heuristic::{
    estimate_similarity, normalize_similarity, pruning_rate, PruningHeuristicConfig,
};
pub(crate) use mask::check_rate;
pub use mask::{
    apply_mask, generate_mask, mask_from_averages, select_top_k, LayerMask, RankMode, UnlearnMask,
};
pub use rate_limit::RateLimiter;
pub use recovery::{
    recover, recovery_bound, unlearn_and_recover, RecoveryContext, RecoveryPlan, RecoveryRule,
    UnlearnConfig, UnlearnOutcome,
};
