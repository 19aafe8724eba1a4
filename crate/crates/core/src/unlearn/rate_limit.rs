use std::collections::BTreeSet;

use crate::fl::ClientId;

/// Batches detections so that unlearning runs at most once every
/// `threshold` rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateLimiter {
    pub threshold: u64,
    pub last_unlearn_round: Option<u64>,
    pub pending: BTreeSet<ClientId>,
}

impl RateLimiter {
    pub fn new(threshold: u64) -> Self {
        Self {
            threshold,
            last_unlearn_round: None,
            pending: BTreeSet::new(),
        }
    }

    pub fn can_fire(&self, round: u64) -> bool {
        !self.pending.is_empty()
            && self
                .last_unlearn_round
                .is_none_or(|last| round.saturating_sub(last) >= self.threshold)
    }

    /// Adds new detections; when allowed, drains and returns the whole
    /// pending set and records `round` as the last unlearning round.
    pub fn step(
        &mut self,
        round: u64,
        new_detections: impl IntoIterator<Item = ClientId>,
    ) -> Option<BTreeSet<ClientId>> {
        self.pending.extend(new_detections);
        if !self.can_fire(round) {
            return None;
        }
        self.last_unlearn_round = Some(round);
        Some(std::mem::take(&mut self.pending))
    }
}
