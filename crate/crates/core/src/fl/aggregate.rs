use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ClientId, ClientUpdate};
use crate::nn::{ModelParams, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    BySampleCount,
}

/// Weighted per-parameter mean, accumulated in `f64` in the given order and
/// rounded once at the end.
fn weighted_mean<T: Real>(items: &[(&ModelParams<T>, f64)]) -> ModelParams<T> {
    let first = items[0].0;
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut out = first.zeros_like();
    for (li, layer) in out.layers.iter_mut().enumerate() {
        let mut acc_w = vec![0.0f64; layer.weights.len()];
        let mut acc_b = vec![0.0f64; layer.biases.len()];
        for (model, w) in items {
            let src = &model.layers[li];
            for (a, v) in acc_w.iter_mut().zip(&src.weights) {
                *a += w * v.to_f64().unwrap();
            }
            for (a, v) in acc_b.iter_mut().zip(&src.biases) {
                *a += w * v.to_f64().unwrap();
            }
        }
        for (dst, a) in layer.weights.iter_mut().zip(acc_w) {
            *dst = T::from_f64(a / total).unwrap();
        }
        for (dst, a) in layer.biases.iter_mut().zip(acc_b) {
            *dst = T::from_f64(a / total).unwrap();
        }
    }
    out
}

fn sorted_by_id<'a, T: Real>(updates: &[&'a ClientUpdate<T>]) -> Result<Vec<&'a ClientUpdate<T>>> {
    let mut sorted = updates.to_vec();
    sorted.sort_by_key(|u| u.client_id);
    if sorted.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Usage("duplicate client id among updates".into()));
    }
    let first = &sorted[0].params;
    if sorted.iter().any(|u| !u.params.is_congruent(first)) {
        return Err(Error::Config("updates are not congruent".into()));
    }
    Ok(sorted)
}

/// FedAvg over `updates`, summed in ascending client-id order so the result
/// does not depend on the order updates arrive in.
pub fn fedavg<T: Real>(
    updates: &[ClientUpdate<T>],
    weighting: Weighting,
) -> Result<ModelParams<T>> {
    if updates.is_empty() {
        return Err(Error::Usage("fedavg needs at least one update".into()));
    }
    let refs: Vec<_> = updates.iter().collect();
    let sorted = sorted_by_id(&refs)?;
    let items: Vec<_> = sorted
        .iter()
        .map(|u| {
            let w = match weighting {
                Weighting::Uniform => 1.0,
                Weighting::BySampleCount => u.sample_count as f64,
            };
            (&u.params, w)
        })
        .collect();
    if items.iter().all(|(_, w)| *w == 0.0) {
        return Err(Error::Usage("all aggregation weights are zero".into()));
    }
    Ok(weighted_mean(&items))
}

/// Uniform mean over the updates whose client id is in `subset`.
pub fn avg_models<T: Real>(
    updates: &[ClientUpdate<T>],
    subset: &BTreeSet<ClientId>,
) -> Result<ModelParams<T>> {
    if subset.is_empty() {
        return Err(Error::Usage("cannot average an empty client subset".into()));
    }
    let picked: Vec<_> = updates
        .iter()
        .filter(|u| subset.contains(&u.client_id))
        .collect();
    if let Some(missing) = subset
        .iter()
        .find(|id| !picked.iter().any(|u| u.client_id == **id))
    {
        return Err(Error::Usage(format!("no update from client {missing}")));
    }
    let sorted = sorted_by_id(&picked)?;
    let items: Vec<_> = sorted.iter().map(|u| (&u.params, 1.0)).collect();
    Ok(weighted_mean(&items))
}
