//! Reference strategies the unlearning engine is compared against.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::count::ceil_count;
use crate::fl::{avg_models, Client, ClientId, ServerState, Weighting};
use crate::nn::ModelParams;
use crate::rng::{self, Stream};
use crate::unlearn::{apply_mask, check_rate, select_top_k, LayerMask, UnlearnMask};
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Retrain,
    NaturalForgetting,
    RandomPrune,
    MaliciousMagnitudePrune,
    WeightNegation,
}

impl BaselineKind {
    pub fn prunes(self) -> bool {
        matches!(
            self,
            BaselineKind::RandomPrune | BaselineKind::MaliciousMagnitudePrune
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Retrain => "retrain",
            BaselineKind::NaturalForgetting => "natural_forgetting",
            BaselineKind::RandomPrune => "random_prune",
            BaselineKind::MaliciousMagnitudePrune => "malicious_magnitude_prune",
            BaselineKind::WeightNegation => "weight_negation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.kind.prunes(), self.p) {
            (true, Some(p)) if p > 0.0 && p <= 1.0 => Ok(()),
            (true, Some(p)) => Err(Error::Config(format!("pruning rate {p} not in (0, 1]"))),
            (true, None) => Err(Error::Config(format!(
                "{} needs a pruning rate",
                self.kind.as_str()
            ))),
            (false, Some(_)) => Err(Error::Config(format!(
                "{} does not take a pruning rate",
                self.kind.as_str()
            ))),
            (false, None) => Ok(()),
        }
    }
}

/// `ceil(P * n)` indices per prunable layer, uniformly at random.
pub fn random_mask(model: &ModelParams, p: f64, seed: u64) -> Result<UnlearnMask> {
    check_rate(p)?;
    let layers = model
        .prunable_layers()
        .map(|li| {
            let n = model.layers[li].weights.len();
            let mut rng = rng::stream(seed, Stream::Baseline, &[li as u64]);
            let mut indices = index::sample(&mut rng, n, ceil_count(p, n)).into_vec();
            indices.sort_unstable();
            LayerMask {
                layer_index: li,
                indices,
            }
        })
        .collect();
    Ok(UnlearnMask { layers })
}

/// Top `ceil(P * n)` indices per prunable layer by `|avg_malicious|`.
pub fn malicious_magnitude_mask(avg_malicious: &ModelParams, p: f64) -> Result<UnlearnMask> {
    check_rate(p)?;
    let layers = avg_malicious
        .prunable_layers()
        .map(|li| {
            let ranks: Vec<f64> = avg_malicious.layers[li]
                .weights
                .iter()
                .map(|w| f64::from(w.abs()))
                .collect();
            LayerMask {
                layer_index: li,
                indices: select_top_k(&ranks, ceil_count(p, ranks.len())),
            }
        })
        .collect();
    Ok(UnlearnMask { layers })
}

/// Flips the sign of every weight in the first dense/conv layer.
pub fn negate_first_layer(model: &ModelParams) -> Result<ModelParams> {
    let li = model
        .prunable_layers()
        .next()
        .ok_or_else(|| Error::Usage("model has no dense or conv layer".into()))?;
    let mut out = model.clone();
    for w in &mut out.layers[li].weights {
        *w = -*w;
    }
    Ok(out)
}

/// Plain FedAvg rounds over `clients`, with no pruning.
pub fn natural_forgetting(
    state: &mut ServerState,
    clients: &[Client],
    rounds: u64,
    seed: u64,
) -> Result<()> {
    for step in 1..=rounds {
        state.run_round(clients, rng::derive(seed, &[step]))?;
    }
    Ok(())
}

/// What a non-retrain strategy did to the global model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mitigation {
    pub layers: usize,
    pub pruned: usize,
}

/// Applies a non-retrain baseline in place of the unlearning step and drops
/// `to_unlearn` from enrollment. Pruning baselines start from the benign
/// average of the current round, as the unlearning engine does.
pub fn mitigate(
    state: &mut ServerState,
    spec: &BaselineSpec,
    to_unlearn: &BTreeSet<ClientId>,
) -> Result<Mitigation> {
    spec.validate()?;
    let mut summary = Mitigation::default();
    match spec.kind {
        BaselineKind::Retrain => {
            return Err(Error::Usage("retrain is not an in-place mitigation".into()));
        }
        BaselineKind::NaturalForgetting => {}
        BaselineKind::WeightNegation => {
            state.global = negate_first_layer(&state.global)?;
        }
        BaselineKind::RandomPrune | BaselineKind::MaliciousMagnitudePrune => {
            let p = spec.p.unwrap_or(0.0);
            let updates = state.current_updates()?;
            let benign: BTreeSet<ClientId> = updates
                .iter()
                .map(|u| u.client_id)
                .filter(|id| !to_unlearn.contains(id))
                .collect();
            let avg_benign = avg_models(updates, &benign)?;
            let mask = if spec.kind == BaselineKind::RandomPrune {
                random_mask(&avg_benign, p, spec.seed)?
            } else {
                malicious_magnitude_mask(&avg_models(updates, to_unlearn)?, p)?
            };
            summary = Mitigation {
                layers: mask.layers.len(),
                pruned: mask.total_pruned(),
            };
            state.global = apply_mask(&mask, &avg_benign)?;
        }
    }
    state.remove_clients(to_unlearn);
    state.last_unlearn_round = Some(state.round_index);
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainConfig {
    /// Accuracy the retrained model must reach, up to `epsilon`.
    pub target_accuracy: f64,
    pub epsilon: f64,
    pub max_rounds: u64,
    pub seed: u64,
    pub weighting: Weighting,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub model: ModelParams,
    /// Rounds run: the first round within `epsilon` of the target, or
    /// `max_rounds` when never reached.
    pub r_star: u64,
    pub converged: bool,
    /// Test accuracy after each round.
    pub accuracies: Vec<f64>,
}

/// FedAvg from `init` over `clients` until test accuracy reaches the target.
pub fn retrain_from_scratch(
    clients: &[Client],
    init: ModelParams,
    cfg: &RetrainConfig,
    evaluate: &mut dyn FnMut(&ModelParams) -> Result<f64>,
) -> Result<RetrainOutcome> {
    if clients.len() < 2 {
        return Err(Error::Usage(format!(
            "retraining needs at least 2 clients, got {}",
            clients.len()
        )));
    }
    let mut state = ServerState::new(init, clients.iter().map(|c| c.id));
    state.weighting = cfg.weighting;
    state.execution = cfg.execution;
    let mut accuracies = Vec::new();
    let mut converged = false;
    for round in 1..=cfg.max_rounds {
        state.run_round(clients, rng::derive(cfg.seed, &[round]))?;
        let acc = evaluate(&state.global)?;
        accuracies.push(acc);
        if acc >= cfg.target_accuracy - cfg.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "retrain did not reach {:.4} within {} rounds",
            cfg.target_accuracy,
            cfg.max_rounds
        );
    }
    Ok(RetrainOutcome {
        model: state.global,
        r_star: accuracies.len() as u64,
        converged,
        accuracies,
    })
}
