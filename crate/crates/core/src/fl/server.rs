use std::collections::BTreeSet;

use super::{fedavg, local_train, Client, ClientId, ClientUpdate, EventKind, EventLog, Weighting};
use crate::nn::{checkpoint, ModelParams};
use crate::{Error, Execution, Result};

/// Client models from exactly one round, tagged with that round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdates {
    pub round: u64,
    pub updates: Vec<ClientUpdate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub participants: Vec<ClientId>,
    pub aggregated: Vec<ClientId>,
    pub diverged: Vec<ClientId>,
}

/// Server-side state. Only the most recent round of client models is ever
/// retained, together with the global model they were trained from.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ModelParams,
    /// Global model the stored updates started from.
    pub round_base: ModelParams,
    pub round_index: u64,
    pub last_round: Option<RoundUpdates>,
    pub enrolled: BTreeSet<ClientId>,
    /// Detected clients awaiting unlearning; excluded from aggregation.
    pub pending_detections: BTreeSet<ClientId>,
    pub last_unlearn_round: Option<u64>,
    /// Bytes of model state retained: stored updates plus the base model.
    pub storage_bytes: u64,
    pub weighting: Weighting,
    pub execution: Execution,
    pub events: EventLog,
}

impl ServerState {
    pub fn new(global: ModelParams, enrolled: impl IntoIterator<Item = ClientId>) -> Self {
        Self {
            round_base: global.clone(),
            global,
            round_index: 0,
            last_round: None,
            enrolled: enrolled.into_iter().collect(),
            pending_detections: BTreeSet::new(),
            last_unlearn_round: None,
            storage_bytes: 0,
            weighting: Weighting::Uniform,
            execution: Execution::default(),
            events: EventLog::default(),
        }
    }

    pub fn model_bytes(&self) -> u64 {
        checkpoint::encoded_len(&self.global) as u64
    }

    /// Updates of the current round; errors if none are stored or they are
    /// older than the current round.
    pub fn current_updates(&self) -> Result<&[ClientUpdate]> {
        match &self.last_round {
            Some(r) if r.round == self.round_index => Ok(&r.updates),
            Some(r) => Err(Error::State(format!(
                "stored updates are from round {}, current round is {}",
                r.round, self.round_index
            ))),
            None => Err(Error::State("no client updates stored".into())),
        }
    }

    /// Marks clients as detected: they keep training (so their latest model
    /// is available for unlearning) but stop contributing to the aggregate.
    pub fn set_pending(&mut self, pending: &BTreeSet<ClientId>) {
        self.pending_detections = pending.intersection(&self.enrolled).copied().collect();
    }

    pub fn remove_clients(&mut self, ids: &BTreeSet<ClientId>) {
        for id in ids {
            self.enrolled.remove(id);
            self.pending_detections.remove(id);
        }
    }

    /// One FedAvg round over the enrolled clients.
    ///
    /// Updates that fail numerically are logged and left out. If none
    /// survive, the round is aborted and only the event log changes.
    pub fn run_round(&mut self, clients: &[Client], seed: u64) -> Result<RoundReport> {
        let mut participants: Vec<&Client> = clients
            .iter()
            .filter(|c| self.enrolled.contains(&c.id))
            .collect();
        participants.sort_by_key(|c| c.id);
        if participants.len() < 2 {
            return Err(Error::State(format!(
                "a round needs at least 2 enrolled clients, have {}",
                participants.len()
            )));
        }
        let round = self.round_index + 1;
        let global = &self.global;
        let results = self
            .execution
            .map(&participants, |c| local_train(c, global, seed));

        let mut updates = Vec::with_capacity(results.len());
        let mut diverged = Vec::new();
        for (client, result) in participants.iter().zip(results) {
            match result {
                Ok(u) => updates.push(u),
                Err(Error::Numerical(reason)) => {
                    diverged.push(client.id);
                    self.events.push(
                        round,
                        EventKind::ClientDiverged {
                            client: client.id,
                            reason,
                        },
                    );
                }
                Err(e) => return Err(e),
            }
        }
        let contributing: Vec<ClientUpdate> = updates
            .iter()
            .filter(|u| !self.pending_detections.contains(&u.client_id))
            .cloned()
            .collect();
        if contributing.is_empty() {
            let reason = format!("no usable updates ({} diverged)", diverged.len());
            self.events.push(
                round,
                EventKind::RoundAborted {
                    reason: reason.clone(),
                },
            );
            return Err(Error::Numerical(reason));
        }
        let aggregate = fedavg(&contributing, self.weighting)?;

        self.round_base = std::mem::replace(&mut self.global, aggregate);
        self.round_index = round;
        let stored = updates.len() as u64;
        self.last_round = Some(RoundUpdates { round, updates });
        self.storage_bytes = (stored + 1) * self.model_bytes();
        debug_assert!(self.current_updates().is_ok());

        Ok(RoundReport {
            round,
            participants: participants.iter().map(|c| c.id).collect(),
            aggregated: contributing.iter().map(|u| u.client_id).collect(),
            diverged,
        })
    }
}
