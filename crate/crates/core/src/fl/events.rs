use std::fmt;

use super::ClientId;

/// Renders an id list as `3;5;7` (commas separate `k=v` pairs).
pub fn format_ids<'a>(ids: impl IntoIterator<Item = &'a ClientId>) -> String {
    ids.into_iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    PoisonSkipped {
        client: ClientId,
        reason: String,
    },
    ClientDiverged {
        client: ClientId,
        reason: String,
    },
    RoundAborted {
        reason: String,
    },
    Detection {
        clients: Vec<ClientId>,
    },
    RateLimited {
        pending: Vec<ClientId>,
        last_unlearn: u64,
    },
    Unlearn {
        p: f64,
        layers: usize,
        pruned: usize,
        clients: Vec<ClientId>,
        bound: Option<u64>,
    },
    Mitigation {
        strategy: String,
        clients: Vec<ClientId>,
    },
    UnlearnSkipped {
        reason: String,
    },
    Recovery {
        step: u64,
        test_acc: f64,
    },
    RecoveryDone {
        rounds: u64,
        reached_target: bool,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PoisonSkipped { .. } => "poison_skipped",
            EventKind::ClientDiverged { .. } => "client_diverged",
            EventKind::RoundAborted { .. } => "round_aborted",
            EventKind::Detection { .. } => "detection",
            EventKind::RateLimited { .. } => "rate_limited",
            EventKind::Unlearn { .. } => "unlearn",
            EventKind::Mitigation { .. } => "mitigation",
            EventKind::UnlearnSkipped { .. } => "unlearn_skipped",
            EventKind::Recovery { .. } => "recovery",
            EventKind::RecoveryDone { .. } => "recovery_done",
        }
    }

    fn detail(&self) -> Vec<(&'static str, String)> {
        match self {
            EventKind::PoisonSkipped { client, reason }
            | EventKind::ClientDiverged { client, reason } => {
                vec![
                    ("client", client.to_string()),
                    ("reason", reason.replace(',', ";")),
                ]
            }
            EventKind::RoundAborted { reason } | EventKind::UnlearnSkipped { reason } => {
                vec![("reason", reason.replace(',', ";"))]
            }
            EventKind::Detection { clients } => vec![("clients", format_ids(clients))],
            EventKind::RateLimited {
                pending,
                last_unlearn,
            } => vec![
                ("pending", format_ids(pending)),
                ("last_unlearn", last_unlearn.to_string()),
            ],
            EventKind::Unlearn { .. } => Vec::new(),
            EventKind::Mitigation { strategy, clients } => vec![
                ("strategy", strategy.clone()),
                ("clients", format_ids(clients)),
            ],
            EventKind::Recovery { step, test_acc } => {
                vec![
                    ("step", step.to_string()),
                    ("test_acc", test_acc.to_string()),
                ]
            }
            EventKind::RecoveryDone {
                rounds,
                reached_target,
            } => vec![
                ("rounds", rounds.to_string()),
                ("reached_target", reached_target.to_string()),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub round: u64,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "round={} event={}", self.round, self.kind.name())?;
        if let EventKind::Unlearn {
            p,
            layers,
            pruned,
            clients,
            bound,
        } = &self.kind
        {
            let bound = bound.map_or_else(|| "none".to_string(), |b| b.to_string());
            return write!(
                f,
                " P={p} layers={layers} pruned={pruned} clients={} bound={bound}",
                format_ids(clients)
            );
        }
        let detail = self
            .kind
            .detail()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        write!(f, " detail={detail}")
    }
}

/// Append-only event record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, round: u64, kind: EventKind) {
        let event = Event { round, kind };
        log::debug!("{event}");
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn for_round(&self, round: u64) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.round == round)
    }

    pub fn lines(&self) -> Vec<String> {
        self.events.iter().map(ToString::to_string).collect()
    }

    pub fn extend(&mut self, other: EventLog) {
        self.events.extend(other.events);
    }
}
