use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::nn::{train_step_in_place, AdamConfig, ModelParams, OptimizerState};
use crate::{rng, Error, Result};

pub type ClientId = usize;

#[derive(Debug, Clone)]
pub struct Client {
    pub id: ClientId,
    /// Local data, possibly poisoned.
    pub dataset: Dataset,
    /// Ground truth, only read by the oracle detector and by metrics.
    pub is_malicious: bool,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

/// A client's model after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T = f32> {
    pub client_id: ClientId,
    pub params: ModelParams<T>,
    pub sample_count: usize,
}

/// Trains a copy of `global` on the client's data for `local_epochs`
/// epochs of shuffled mini-batches with a fresh Adam state.
///
/// A numerical failure surfaces as [`Error::Numerical`]; the server treats
/// such an update as divergent and leaves it out of aggregation.
pub fn local_train(client: &Client, global: &ModelParams, seed: u64) -> Result<ClientUpdate> {
    if client.dataset.is_empty() {
        return Err(Error::Usage(format!("client {} has no data", client.id)));
    }
    if client.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    global.output_shape(&client.dataset.sample_shape)?;
    let mut model = global.clone();
    let mut opt = OptimizerState::new(&model, client.optimizer);
    let mut order: Vec<usize> = (0..client.dataset.len()).collect();
    for epoch in 0..client.local_epochs {
        let mut rng = rng::from_seed(rng::derive(seed, &[client.id as u64, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(client.batch_size) {
            let batch = client.dataset.batch(chunk)?;
            train_step_in_place(&mut model, &mut opt, &batch).map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("client {} epoch {epoch}: {msg}", client.id))
                }
                other => other,
            })?;
        }
    }
    Ok(ClientUpdate {
        client_id: client.id,
        params: model,
        sample_count: client.dataset.len(),
    })
}
