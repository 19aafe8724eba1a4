use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::mask::{check_majority, check_rate};
use super::{apply_mask, estimate_similarity, generate_mask, PruningHeuristicConfig, RankMode};
use crate::count::ceil_real;
use crate::fl::{avg_models, Client, ClientId, ClientUpdate, EventKind, ServerState};
use crate::rng::derive;
use crate::{Error, Result};

/// Upper bound on recovery rounds: `ceil(r_star * p)`.
pub fn recovery_bound(r_star: u64, p: f64) -> u64 {
    ceil_real(r_star as f64 * p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryPlan {
    /// Rounds a retrain from scratch needed, when known.
    pub r_star: Option<u64>,
    pub p: f64,
    pub actual_rounds_used: u64,
}

impl RecoveryPlan {
    pub fn bound(&self) -> Option<u64> {
        self.r_star.map(|r| recovery_bound(r, self.p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecoveryRule {
    /// Stop once test accuracy is back within `recovery_epsilon` of its
    /// pre-unlearning value, or when the round limit is reached.
    #[default]
    UntilRecovered,
    /// Always run exactly this many rounds.
    Fixed { rounds: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub heuristic: PruningHeuristicConfig,
    /// Fixed pruning rate; bypasses the similarity heuristic.
    pub p_override: Option<f64>,
    pub rank_mode: RankMode,
    pub recovery: RecoveryRule,
    pub recovery_epsilon: f64,
    /// Round limit when no retrain reference is available.
    pub max_recovery_rounds: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            heuristic: PruningHeuristicConfig::default(),
            p_override: None,
            rank_mode: RankMode::default(),
            recovery: RecoveryRule::default(),
            recovery_epsilon: 0.01,
            max_recovery_rounds: 20,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        self.heuristic.validate()?;
        if let Some(p) = self.p_override {
            check_rate(p).map_err(|_| Error::Config(format!("p_override {p} not in (0, 1]")))?;
        }
        if !(self.recovery_epsilon >= 0.0 && self.recovery_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "recovery_epsilon must be a finite non-negative number, got {}",
                self.recovery_epsilon
            )));
        }
        Ok(())
    }

    /// Similarity (when measured) and the pruning rate to use.
    pub fn choose_rate(&self, benign_updates: &[ClientUpdate]) -> Result<(Option<f64>, f64)> {
        if let Some(p) = self.p_override {
            return Ok((None, p));
        }
        let sim = estimate_similarity(benign_updates)?;
        Ok((Some(sim), self.heuristic.rate_for_similarity(sim).1))
    }

    /// Recovery rounds allowed for a given retrain reference and rate.
    pub fn round_limit(&self, r_star: Option<u64>, p: f64) -> u64 {
        match self.recovery {
            RecoveryRule::Fixed { rounds } => rounds,
            RecoveryRule::UntilRecovered => r_star
                .map(|r| recovery_bound(r, p))
                .unwrap_or(self.max_recovery_rounds),
        }
    }
}

/// Per-run facts the recovery loop needs from its caller.
pub struct RecoveryContext<'a> {
    pub pre_unlearn_accuracy: f64,
    pub r_star: Option<u64>,
    pub seed: u64,
    /// Called after every recovery round; returns test accuracy.
    pub observe: &'a mut dyn FnMut(&ServerState) -> Result<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnOutcome {
    pub round: u64,
    pub clients: BTreeSet<ClientId>,
    pub similarity: Option<f64>,
    pub p: f64,
    pub layers: usize,
    pub pruned: usize,
    pub plan: RecoveryPlan,
    pub reached_target: bool,
}

/// Runs FedAvg rounds over the enrolled clients. Returns the number of
/// rounds run and whether accuracy came back to target.
pub fn recover(
    state: &mut ServerState,
    clients: &[Client],
    cfg: &UnlearnConfig,
    limit: u64,
    ctx: &mut RecoveryContext<'_>,
) -> Result<(u64, bool)> {
    let target = ctx.pre_unlearn_accuracy - cfg.recovery_epsilon;
    let mut reached = false;
    let mut used = 0;
    for step in 1..=limit {
        state.run_round(clients, derive(ctx.seed, &[step]))?;
        let acc = (ctx.observe)(state)?;
        used = step;
        state.events.push(
            state.round_index,
            EventKind::Recovery {
                step,
                test_acc: acc,
            },
        );
        reached = acc >= target;
        if reached && cfg.recovery == RecoveryRule::UntilRecovered {
            break;
        }
    }
    state.events.push(
        state.round_index,
        EventKind::RecoveryDone {
            rounds: used,
            reached_target: reached,
        },
    );
    Ok((used, reached))
}

/// Removes `to_unlearn` from the global model using only the current round's
/// client models, then lets the remaining clients recover it.
///
/// Returns `None` (after logging) when there is nothing to unlearn.
pub fn unlearn_and_recover(
    state: &mut ServerState,
    clients: &[Client],
    to_unlearn: &BTreeSet<ClientId>,
    cfg: &UnlearnConfig,
    ctx: &mut RecoveryContext<'_>,
) -> Result<Option<UnlearnOutcome>> {
    let round = state.round_index;
    if to_unlearn.is_empty() {
        state.events.push(
            round,
            EventKind::UnlearnSkipped {
                reason: "no clients to unlearn".into(),
            },
        );
        return Ok(None);
    }
    let updates = state.current_updates()?.to_vec();
    let present: BTreeSet<ClientId> = updates.iter().map(|u| u.client_id).collect();
    if let Some(id) = to_unlearn.iter().find(|id| !present.contains(id)) {
        return Err(Error::State(format!(
            "no update from client {id} in round {round}"
        )));
    }
    check_majority(to_unlearn.len(), updates.len())?;
    let benign_ids: BTreeSet<ClientId> = present.difference(to_unlearn).copied().collect();
    let benign: Vec<ClientUpdate> = updates
        .iter()
        .filter(|u| benign_ids.contains(&u.client_id))
        .cloned()
        .collect();

    let (similarity, p) = cfg.choose_rate(&benign)?;
    let mask = generate_mask(&updates, to_unlearn, &state.round_base, p, cfg.rank_mode)?;
    let avg_benign = avg_models(&updates, &benign_ids)?;
    state.global = apply_mask(&mask, &avg_benign)?;
    state.remove_clients(to_unlearn);
    state.last_unlearn_round = Some(round);

    let mut plan = RecoveryPlan {
        r_star: ctx.r_star,
        p,
        actual_rounds_used: 0,
    };
    let (layers, pruned) = (mask.layers.len(), mask.total_pruned());
    state.events.push(
        round,
        EventKind::Unlearn {
            p,
            layers,
            pruned,
            clients: to_unlearn.iter().copied().collect(),
            bound: plan.bound(),
        },
    );
    log::info!(
        "round {round}: unlearned {:?} with P={p:.5} ({pruned} weights)",
        to_unlearn
    );

    let limit = cfg.round_limit(ctx.r_star, p);
    let (used, reached_target) = recover(state, clients, cfg, limit, ctx)?;
    plan.actual_rounds_used = used;
    Ok(Some(UnlearnOutcome {
        round,
        clients: to_unlearn.clone(),
        similarity,
        p,
        layers,
        pruned,
        plan,
        reached_target,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::nn::{evaluate, AdamConfig, ModelSpec};

    #[test]
    fn bounds() {
        assert_eq!(recovery_bound(24, 0.10), 3);
        assert_eq!(recovery_bound(37, 0.04), 2);
        assert_eq!(recovery_bound(75, 0.03), 3);
        assert_eq!(recovery_bound(17, 1.0), 17);
        let plan = RecoveryPlan {
            r_star: Some(24),
            p: 0.1,
            actual_rounds_used: 1,
        };
        assert_eq!(plan.bound(), Some(3));
    }

    fn setup() -> (ServerState, Vec<Client>, crate::data::Dataset) {
        let spec = ModelSpec::Mlp {
            input_dim: 4,
            hidden: vec![8],
            num_classes: 3,
            input_affine: false,
        };
        let test = gen_synthetic(3, 4, 20, 0.3, 99).unwrap();
        let clients: Vec<Client> = (0..5)
            .map(|id| Client {
                id,
                dataset: gen_synthetic(3, 4, 10, 0.3, 99).unwrap(),
                is_malicious: id == 4,
                local_epochs: 1,
                batch_size: 8,
                optimizer: AdamConfig::default(),
            })
            .collect();
        let mut state = ServerState::new(spec.init(1).unwrap(), clients.iter().map(|c| c.id));
        for r in 0..3 {
            state.run_round(&clients, r).unwrap();
        }
        (state, clients, test)
    }

    #[test]
    fn empty_request_only_logs() {
        let (mut state, clients, _) = setup();
        let global = state.global.clone();
        let n_events = state.events.events().len();
        let mut observe = |_: &ServerState| -> Result<f64> { unreachable!() };
        let mut ctx = RecoveryContext {
            pre_unlearn_accuracy: 1.0,
            r_star: None,
            seed: 0,
            observe: &mut observe,
        };
        let out = unlearn_and_recover(
            &mut state,
            &clients,
            &BTreeSet::new(),
            &UnlearnConfig::default(),
            &mut ctx,
        )
        .unwrap();
        assert!(out.is_none());
        assert_eq!(state.global, global);
        assert_eq!(state.events.events().len(), n_events + 1);
    }

    #[test]
    fn unlearn_removes_client_and_respects_limit() {
        let (mut state, clients, test) = setup();
        let pre = evaluate(&state.global, &test).unwrap();
        let mut observe = |s: &ServerState| evaluate(&s.global, &test);
        let mut ctx = RecoveryContext {
            pre_unlearn_accuracy: pre,
            r_star: Some(20),
            seed: 5,
            observe: &mut observe,
        };
        let cfg = UnlearnConfig {
            p_override: Some(0.1),
            ..UnlearnConfig::default()
        };
        let round = state.round_index;
        let out = unlearn_and_recover(&mut state, &clients, &BTreeSet::from([4]), &cfg, &mut ctx)
            .unwrap()
            .unwrap();
        assert_eq!(out.round, round);
        assert_eq!(out.plan.bound(), Some(2));
        assert!((1..=2).contains(&out.plan.actual_rounds_used));
        assert!(!state.enrolled.contains(&4));
        assert_eq!(state.last_unlearn_round, Some(round));
        let updates = state.current_updates().unwrap();
        assert!(updates.iter().all(|u| u.client_id != 4));
        let line = state
            .events
            .lines()
            .into_iter()
            .find(|l| l.contains("event=unlearn "))
            .unwrap();
        assert_eq!(
            line,
            format!(
                "round={round} event=unlearn P=0.1 layers=2 pruned={} clients=4 bound=2",
                out.pruned
            )
        );
    }

    #[test]
    fn pruning_adds_exact_zero_count() {
        let (mut state, clients, _) = setup();
        let updates = state.current_updates().unwrap().to_vec();
        let benign: BTreeSet<ClientId> = (0..4).collect();
        let avg_benign = avg_models(&updates, &benign).unwrap();
        let mut observe = |_: &ServerState| Ok(1.0);
        let mut ctx = RecoveryContext {
            pre_unlearn_accuracy: 0.0,
            r_star: None,
            seed: 5,
            observe: &mut observe,
        };
        let cfg = UnlearnConfig {
            recovery: RecoveryRule::Fixed { rounds: 0 },
            ..UnlearnConfig::default()
        };
        let out = unlearn_and_recover(&mut state, &clients, &BTreeSet::from([4]), &cfg, &mut ctx)
            .unwrap()
            .unwrap();
        assert_eq!(out.plan.actual_rounds_used, 0);
        assert!(out.similarity.is_some());
        for li in state.global.prunable_layers() {
            let zeros = |w: &[f32]| w.iter().filter(|&&x| x == 0.0).count();
            let n = avg_benign.layers[li].weights.len();
            let expected = (out.p * n as f64 - 1e-9).ceil() as usize;
            assert_eq!(
                zeros(&state.global.layers[li].weights) - zeros(&avg_benign.layers[li].weights),
                expected
            );
        }
    }

    #[test]
    fn majority_and_stale_state_are_refused() {
        let (mut state, clients, _) = setup();
        let mut observe = |_: &ServerState| Ok(1.0);
        let mut ctx = RecoveryContext {
            pre_unlearn_accuracy: 0.0,
            r_star: None,
            seed: 5,
            observe: &mut observe,
        };
        let cfg = UnlearnConfig::default();
        assert!(matches!(
            unlearn_and_recover(
                &mut state,
                &clients,
                &BTreeSet::from([0, 1, 2]),
                &cfg,
                &mut ctx
            ),
            Err(Error::MajorityViolation {
                malicious: 3,
                total: 5
            })
        ));
        assert!(matches!(
            unlearn_and_recover(&mut state, &clients, &BTreeSet::from([9]), &cfg, &mut ctx),
            Err(Error::State(_))
        ));
        state.last_round = None;
        assert!(matches!(
            unlearn_and_recover(&mut state, &clients, &BTreeSet::from([4]), &cfg, &mut ctx),
            Err(Error::State(_))
        ));
    }
}
