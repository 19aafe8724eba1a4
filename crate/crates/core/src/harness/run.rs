use std::collections::BTreeSet;

use super::{
    compute_attack_success, storage_report, DatasetSpec, ExperimentConfig, MetricsReport,
    RoundMetrics, Strategy, Summary, UnlearnSummary,
};
use crate::baselines::{
    mitigate, retrain_from_scratch, BaselineSpec, RetrainConfig, RetrainOutcome,
};
use crate::data::{
    apply_backdoor, apply_label_flip, load_idx, make_triggered_testset, partition,
    synthetic_train_test, AttackSpec, Dataset,
};
use crate::fl::{Client, ClientId, ClientUpdate, EventKind, ServerState};
use crate::nn::{evaluate, ModelParams};
use crate::rng::{stream_seed, Stream};
use crate::unlearn::{recover, unlearn_and_recover, RateLimiter, RecoveryContext};
use crate::{Error, Execution, Result};

/// Everything a run needs before the first round.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub test: Dataset,
    pub clients: Vec<Client>,
    pub malicious: BTreeSet<ClientId>,
    /// Set the attacker wants classified as its labels: triggered test
    /// inputs for a backdoor, the flipped samples for label flipping.
    pub malicious_eval: Option<Dataset>,
    pub init: ModelParams,
}

fn truncate(ds: Dataset, max: Option<usize>) -> Dataset {
    match max {
        Some(m) if m < ds.len() => ds.subset(&(0..m).collect::<Vec<_>>()),
        _ => ds,
    }
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match &cfg.dataset {
        DatasetSpec::Synthetic {
            num_classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            nuisance_dims,
        } => synthetic_train_test(
            *num_classes,
            *dim,
            *train_per_class,
            *test_per_class,
            *spread,
            *nuisance_dims,
            stream_seed(cfg.seed, Stream::Data, &[]),
        )?,
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            max_train,
            max_test,
        } => {
            let mut train = truncate(load_idx(train_images, train_labels)?, *max_train);
            let mut test = truncate(load_idx(test_images, test_labels)?, *max_test);
            let classes = train.num_classes.max(test.num_classes);
            train.num_classes = classes;
            test.num_classes = classes;
            (train, test)
        }
    };
    let shape = cfg.model.input_shape();
    if train.sample_shape != shape {
        train = train.reshape(shape.clone())?;
        test = test.reshape(shape)?;
    }
    Ok((train, test))
}

pub fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    let (train, test) = load_data(cfg)?;
    cfg.check_data_shape(train.num_classes, &train.sample_shape)?;
    let plan = partition(
        &train,
        cfg.partition,
        cfg.client_count,
        stream_seed(cfg.seed, Stream::Partition, &[]),
    )?;
    let malicious = cfg.malicious_clients();
    let mut flipped = Vec::new();
    let mut clients = Vec::with_capacity(cfg.client_count);
    for id in 0..cfg.client_count {
        let mut dataset = plan.client_dataset(&train, id);
        let is_malicious = malicious.contains(&id);
        if let (true, Some(attack)) = (is_malicious, &cfg.attack) {
            let seed = stream_seed(cfg.seed, Stream::Poison, &[id as u64]);
            let poisoned = match attack {
                AttackSpec::LabelFlip { .. } => apply_label_flip(&dataset, attack, seed)?,
                AttackSpec::Backdoor { .. } => apply_backdoor(&dataset, attack, seed)?,
            };
            if matches!(attack, AttackSpec::LabelFlip { .. }) {
                flipped.push(poisoned.dataset.subset(&poisoned.indices));
            }
            dataset = poisoned.dataset;
        }
        clients.push(Client {
            id,
            dataset,
            is_malicious,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            optimizer: cfg.optimizer,
        });
    }
    let malicious_eval = match &cfg.attack {
        Some(attack @ AttackSpec::Backdoor { .. }) => Some(make_triggered_testset(&test, attack)?),
        Some(AttackSpec::LabelFlip { .. }) => {
            let set = Dataset::concat(&flipped)?;
            (!set.is_empty()).then_some(set)
        }
        None => None,
    };
    Ok(Scenario {
        test,
        clients,
        malicious,
        malicious_eval,
        init: cfg.model.init(stream_seed(cfg.seed, Stream::Init, &[]))?,
    })
}

struct Measure<'a> {
    cfg: &'a ExperimentConfig,
    sc: &'a Scenario,
    run_id: String,
}

impl Measure<'_> {
    fn malicious(&self, model: &ModelParams) -> Result<Option<f64>> {
        self.sc
            .malicious_eval
            .as_ref()
            .map(|set| compute_attack_success(model, set))
            .transpose()
    }

    fn row(&self, state: &ServerState) -> Result<RoundMetrics> {
        Ok(RoundMetrics {
            run_id: self.run_id.clone(),
            seed: self.cfg.seed,
            strategy: self.cfg.strategy,
            round: state.round_index,
            test_acc: evaluate(&state.global, &self.sc.test)?,
            malicious_acc: self.malicious(&state.global)?,
            event: String::new(),
            storage_bytes: state.storage_bytes,
        })
    }
}

/// Runs the full timeline: training rounds with poisoned clients, injected
/// detections, rate-limited unlearning (or a baseline) and recovery.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let sc = build_scenario(cfg)?;
    run_scenario(cfg, &sc)
}

/// [`run_experiment`] on an already built scenario.
pub fn run_scenario(cfg: &ExperimentConfig, sc: &Scenario) -> Result<MetricsReport> {
    let m = Measure {
        cfg,
        sc,
        run_id: cfg.run_id(),
    };
    let mut state = ServerState::new(sc.init.clone(), sc.clients.iter().map(|c| c.id));
    state.weighting = cfg.weighting;
    state.execution = cfg.execution;
    let mut limiter = RateLimiter::new(cfg.rate_limit);
    let mut rows: Vec<RoundMetrics> = Vec::new();
    let mut unlearns = Vec::new();
    let mut removed = BTreeSet::new();
    let mut aborted = 0;

    for r in 1..=cfg.rounds {
        let seed = stream_seed(cfg.seed, Stream::Training, &[state.round_index + 1]);
        match state.run_round(&sc.clients, seed) {
            Ok(_) => rows.push(m.row(&state)?),
            Err(Error::Numerical(reason)) => {
                log::warn!("round {r} aborted: {reason}");
                aborted += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        let mut new = BTreeSet::new();
        for d in cfg.detections.iter().filter(|d| d.round == r) {
            if state.enrolled.contains(&d.client) {
                new.insert(d.client);
            } else {
                log::warn!(
                    "ignoring detection of client {} which is no longer enrolled",
                    d.client
                );
            }
        }
        if !new.is_empty() {
            state.events.push(
                state.round_index,
                EventKind::Detection {
                    clients: new.iter().copied().collect(),
                },
            );
        }
        let had_new = !new.is_empty();
        match limiter.step(state.round_index, new) {
            Some(ids) => {
                state.set_pending(&BTreeSet::new());
                let summary = mitigate_and_recover(&m, &mut state, &ids, &removed, &mut rows)?;
                removed.extend(ids);
                unlearns.push(summary);
            }
            None => {
                state.set_pending(&limiter.pending);
                if had_new {
                    state.events.push(
                        state.round_index,
                        EventKind::RateLimited {
                            pending: limiter.pending.iter().copied().collect(),
                            last_unlearn: limiter.last_unlearn_round.unwrap_or(0),
                        },
                    );
                }
            }
        }
    }

    for row in &mut rows {
        let mut names: Vec<&str> = Vec::new();
        for e in state.events.for_round(row.round) {
            if !names.contains(&e.kind.name()) {
                names.push(e.kind.name());
            }
        }
        row.event = names.join(";");
    }
    let last = rows
        .last()
        .ok_or_else(|| Error::Numerical("every round was aborted".into()))?;
    let summary = Summary {
        run_id: m.run_id.clone(),
        seed: cfg.seed,
        strategy: cfg.strategy,
        rounds_run: state.round_index,
        aborted_rounds: aborted,
        final_test_acc: last.test_acc,
        final_malicious_acc: last.malicious_acc,
        unlearns,
        pending_at_end: limiter.pending.iter().copied().collect(),
        peak_storage_bytes: rows.iter().map(|r| r.storage_bytes).max().unwrap_or(0),
        storage: storage_report(cfg)?,
    };
    Ok(MetricsReport {
        rows,
        summary,
        events: state.events.lines(),
    })
}

fn retrain_reference(
    m: &Measure<'_>,
    excluded: &BTreeSet<ClientId>,
    target: f64,
    round: u64,
) -> Result<RetrainOutcome> {
    let keep: Vec<Client> =
        m.sc.clients
            .iter()
            .filter(|c| !excluded.contains(&c.id))
            .cloned()
            .collect();
    let cfg = RetrainConfig {
        target_accuracy: target,
        epsilon: m.cfg.unlearn.recovery_epsilon,
        max_rounds: m.cfg.retrain_max_rounds,
        seed: stream_seed(m.cfg.seed, Stream::Retrain, &[round]),
        weighting: m.cfg.weighting,
        execution: m.cfg.execution,
    };
    retrain_from_scratch(&keep, m.sc.init.clone(), &cfg, &mut |model| {
        evaluate(model, &m.sc.test)
    })
}

fn mitigate_and_recover(
    m: &Measure<'_>,
    state: &mut ServerState,
    ids: &BTreeSet<ClientId>,
    removed: &BTreeSet<ClientId>,
    rows: &mut Vec<RoundMetrics>,
) -> Result<UnlearnSummary> {
    let cfg = m.cfg;
    let round = state.round_index;
    let before = rows
        .last()
        .filter(|r| r.round == round)
        .cloned()
        .ok_or_else(|| Error::State("no metrics for the unlearning round".into()))?;
    let forgotten = Dataset::concat(
        m.sc.clients
            .iter()
            .filter(|c| ids.contains(&c.id))
            .map(|c| &c.dataset),
    )?;
    let forgotten_acc_before = evaluate(&state.global, &forgotten)?;

    let reference = if cfg.retrain_reference || cfg.strategy == Strategy::Retrain {
        let excluded: BTreeSet<ClientId> = removed.union(ids).copied().collect();
        Some(retrain_reference(m, &excluded, before.test_acc, round)?)
    } else {
        None
    };
    let r_star = reference.as_ref().map(|r| r.r_star);
    let rows_before = rows.len();
    let mut observe = |s: &ServerState| -> Result<f64> {
        let row = m.row(s)?;
        let acc = row.test_acc;
        rows.push(row);
        Ok(acc)
    };
    let mut ctx = RecoveryContext {
        pre_unlearn_accuracy: before.test_acc,
        r_star,
        seed: stream_seed(cfg.seed, Stream::Recovery, &[round]),
        observe: &mut observe,
    };

    let mut summary = UnlearnSummary {
        round,
        clients: ids.iter().copied().collect(),
        similarity: None,
        p: None,
        layers: 0,
        pruned: 0,
        test_acc_before: before.test_acc,
        test_acc_after: before.test_acc,
        malicious_acc_before: before.malicious_acc,
        malicious_acc_after: before.malicious_acc,
        forgotten_acc_before,
        forgotten_acc_after: forgotten_acc_before,
        baseline_test_acc: reference
            .as_ref()
            .and_then(|r| r.accuracies.last().copied()),
        baseline_malicious_acc: reference
            .as_ref()
            .map(|r| m.malicious(&r.model))
            .transpose()?
            .flatten(),
        r_star,
        r_star_converged: reference.as_ref().map(|r| r.converged),
        recovery_rounds: 0,
        bound: None,
        reached_target: false,
    };

    match cfg.strategy.baseline() {
        None => {
            let outcome =
                unlearn_and_recover(state, &m.sc.clients, ids, &cfg.unlearn, &mut ctx)?
                    .ok_or_else(|| Error::State("rate limiter released an empty set".into()))?;
            summary.similarity = outcome.similarity;
            summary.p = Some(outcome.p);
            summary.layers = outcome.layers;
            summary.pruned = outcome.pruned;
            summary.recovery_rounds = outcome.plan.actual_rounds_used;
            summary.bound = outcome.plan.bound();
            summary.reached_target = outcome.reached_target;
        }
        Some(kind) => {
            state.events.push(
                round,
                EventKind::Mitigation {
                    strategy: kind.as_str().into(),
                    clients: summary.clients.clone(),
                },
            );
            if cfg.strategy == Strategy::Retrain {
                let reference = reference
                    .as_ref()
                    .expect("retrain strategy always retrains");
                state.global = reference.model.clone();
                state.remove_clients(ids);
                state.last_unlearn_round = Some(round);
                summary.reached_target = reference.converged;
            } else {
                let p = if kind.prunes() {
                    let p = match cfg.baseline_p {
                        Some(p) => p,
                        None => {
                            let benign: Vec<ClientUpdate> = state
                                .current_updates()?
                                .iter()
                                .filter(|u| !ids.contains(&u.client_id))
                                .cloned()
                                .collect();
                            let (sim, p) = cfg.unlearn.choose_rate(&benign)?;
                            summary.similarity = sim;
                            p
                        }
                    };
                    summary.p = Some(p);
                    Some(p)
                } else {
                    None
                };
                let spec = BaselineSpec {
                    kind,
                    p,
                    seed: stream_seed(cfg.seed, Stream::Baseline, &[round]),
                };
                let mitigation = mitigate(state, &spec, ids)?;
                summary.layers = mitigation.layers;
                summary.pruned = mitigation.pruned;
                let rate = p.unwrap_or(1.0);
                summary.bound = r_star.map(|r| crate::unlearn::recovery_bound(r, rate));
                let limit = cfg.unlearn.round_limit(r_star, rate);
                let (used, reached) = recover(state, &m.sc.clients, &cfg.unlearn, limit, &mut ctx)?;
                summary.recovery_rounds = used;
                summary.reached_target = reached;
            }
        }
    }

    match rows.get(rows_before..).and_then(|r| r.last()) {
        Some(after) => {
            summary.test_acc_after = after.test_acc;
            summary.malicious_acc_after = after.malicious_acc;
        }
        None => {
            summary.test_acc_after = evaluate(&state.global, &m.sc.test)?;
            summary.malicious_acc_after = m.malicious(&state.global)?;
        }
    }
    summary.forgotten_acc_after = evaluate(&state.global, &forgotten)?;
    Ok(summary)
}

/// One run per seed, in seed order. Runs are independent, so `execution`
/// only affects wall time.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    execution: Execution,
) -> Vec<Result<MetricsReport>> {
    execution.map(seeds, |&seed| {
        let mut c = cfg.clone();
        c.seed = seed;
        run_experiment(&c)
    })
}
