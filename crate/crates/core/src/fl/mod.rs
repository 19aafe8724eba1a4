//! Federated orchestration: local training, FedAvg and the server round loop.

mod aggregate;
mod client;
mod events;
mod server;

pub use aggregate::{avg_models, fedavg, Weighting};
pub use client::{local_train, Client, ClientId, ClientUpdate};
pub use events::{format_ids, Event, EventKind, EventLog};
pub use server::{RoundReport, RoundUpdates, ServerState};
