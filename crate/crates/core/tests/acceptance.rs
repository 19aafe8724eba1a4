//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use common::{
    ceil_count, full_sort_top_k, kink_margin, mask_oracle, max_gradient_error, oracle_specs,
    random_problem, three_kind_model,
};
use fedup_core::baselines::malicious_magnitude_mask;
use fedup_core::fl::{fedavg, ClientUpdate, Weighting};
use fedup_core::harness::{
    run_experiment, ExperimentConfig, MetricsReport, StorageModel, Strategy, UnlearnSummary,
};
use fedup_core::nn::{LayerKind, LayerParams, ModelParams};
use fedup_core::unlearn::{
    generate_mask, mask_from_averages, normalize_similarity, pruning_rate, recovery_bound,
    PruningHeuristicConfig, RankMode, RateLimiter,
};
use fedup_core::{rng, ErrorCategory, Execution};
use rand::Rng as _;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn config(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(path, &overrides).unwrap()
}

fn run(mut cfg: ExperimentConfig, seed: u64) -> MetricsReport {
    cfg.seed = seed;
    run_experiment(&cfg).unwrap()
}

fn first_unlearn(report: &MetricsReport) -> &UnlearnSummary {
    &report.summary.unlearns[0]
}

fn count(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

fn a1() -> Verdict {
    let mut ok = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let start = Instant::now();
        let report = run(config("backdoor.json", &[]), seed);
        let secs = start.elapsed().as_secs_f64();
        let u = first_unlearn(&report);
        let (pre, post) = (
            u.malicious_acc_before.unwrap(),
            u.malicious_acc_after.unwrap(),
        );
        let b = u.baseline_malicious_acc.unwrap();
        let pass = pre >= 0.80
            && (post - b).abs() <= 0.05
            && (u.test_acc_after - u.test_acc_before).abs() <= 0.03
            && secs <= 120.0;
        ok.push(pass);
        lines.push(format!(
            "seed {seed}: asr {pre:.3}->{post:.3} B={b:.3} test {:.3}->{:.3} P={:.4} recovery {}/{} {secs:.1}s {}",
            u.test_acc_before,
            u.test_acc_after,
            u.p.unwrap(),
            u.recovery_rounds,
            u.bound.unwrap(),
            if pass { "ok" } else { "miss" }
        ));
    }
    verdict(
        count(&ok) >= 2,
        format!("{}/3 seeds; {}", count(&ok), lines.join("; ")),
    )
}

fn a2() -> Verdict {
    let mut ok = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let report = run(config("label_flip.json", &[]), seed);
        let u = first_unlearn(&report);
        let (pre, post) = (
            u.malicious_acc_before.unwrap(),
            u.malicious_acc_after.unwrap(),
        );
        let b = u.baseline_malicious_acc.unwrap();
        let pass = (post - b).abs() <= 0.05;
        ok.push(pass);
        lines.push(format!(
            "seed {seed}: flipped acc {pre:.3}->{post:.3} B={b:.3} test {:.3}->{:.3} {}",
            u.test_acc_before,
            u.test_acc_after,
            if pass { "ok" } else { "miss" }
        ));
    }
    verdict(
        count(&ok) >= 2,
        format!("{}/3 seeds; {}", count(&ok), lines.join("; ")),
    )
}

fn a3() -> Verdict {
    let strategies = [
        Strategy::Fedup,
        Strategy::MaliciousMagnitudePrune,
        Strategy::RandomPrune,
        Strategy::NaturalForgetting,
    ];
    let mut ok = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let reductions: Vec<f64> = strategies
            .iter()
            .map(|s| {
                let strategy = format!("strategy=\"{}\"", s.as_str());
                let cfg = config(
                    "backdoor.json",
                    &[
                        &strategy,
                        "retrain_reference=false",
                        r#"unlearn.recovery={"rule":"fixed","rounds":10}"#,
                    ],
                );
                let report = run(cfg, seed);
                let u = first_unlearn(&report);
                assert_eq!(u.recovery_rounds, 10);
                u.malicious_acc_before.unwrap() - u.malicious_acc_after.unwrap()
            })
            .collect();
        let [fedup, magnitude, random, natural] = reductions[..] else {
            unreachable!()
        };
        let pass = fedup >= magnitude && magnitude > random && random >= natural;
        ok.push(pass);
        lines.push(format!(
            "seed {seed}: fedup {fedup:.3} magnitude {magnitude:.3} random {random:.3} natural {natural:.3} {}",
            if pass { "ok" } else { "miss" }
        ));
    }
    verdict(
        count(&ok) >= 2,
        format!("{}/3 seeds; {}", count(&ok), lines.join("; ")),
    )
}

fn a4() -> Verdict {
    let cfg = PruningHeuristicConfig::default();
    let checks = [
        ("pruning_rate(0)", pruning_rate(0.0, &cfg) == 0.01),
        ("pruning_rate(1)", pruning_rate(1.0, &cfg) == 0.15),
        (
            "pruning_rate(0.78)",
            (pruning_rate(0.78, &cfg) - 0.05042044).abs() <= 1e-8,
        ),
        ("normalize(0.99)", normalize_similarity(0.99, &cfg) == 0.98),
        ("normalize(0.89)", normalize_similarity(0.89, &cfg) == 0.78),
        ("bound(24, 0.10)", recovery_bound(24, 0.10) == 3),
        ("bound(37, 0.04)", recovery_bound(37, 0.04) == 2),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "pruning_rate(0.78)={:.10} normalize(0.99)={} normalize(0.89)={} failed={failed:?}",
            pruning_rate(0.78, &cfg),
            normalize_similarity(0.99, &cfg),
            normalize_similarity(0.89, &cfg)
        ),
    )
}

fn dense(rows: usize, cols: usize, r: &mut rng::Rng, coarse: bool) -> ModelParams {
    let mut layer = LayerParams::<f32>::zeros(LayerKind::Dense, vec![rows, cols]);
    for w in &mut layer.weights {
        *w = if coarse {
            r.random_range(-2i32..=2) as f32
        } else {
            r.random_range(-1.0f32..1.0)
        };
    }
    ModelParams::new(vec![layer]).unwrap()
}

/// Group mean in ascending client order, accumulated in f64 and rounded to
/// f32 once, as the aggregation contract states.
fn oracle_mean(models: &[&ModelParams]) -> ModelParams<f64> {
    let mut out = models[0].cast::<f64>();
    let n = out.layers[0].weights.len();
    for i in 0..n {
        let sum: f64 = models
            .iter()
            .map(|m| f64::from(m.layers[0].weights[i]))
            .sum();
        out.layers[0].weights[i] = f64::from((sum / models.len() as f64) as f32);
    }
    out
}

fn a5() -> Verdict {
    let mut r = rng::from_seed(2024);
    let mut mismatches = 0;
    let mut sparsity_errors = 0;
    let mut largest = 0;
    for layer_seed in 0..100u64 {
        let n_target = if layer_seed == 0 {
            10_000
        } else {
            r.random_range(1..=10_000)
        };
        let cols = if layer_seed == 0 {
            100
        } else {
            r.random_range(1..=n_target.min(100))
        };
        let rows = (n_target / cols).max(1);
        largest = largest.max(rows * cols);
        let coarse = layer_seed % 4 == 0;
        let clients = r.random_range(3..8);
        let updates: Vec<ClientUpdate> = (0..clients)
            .map(|id| ClientUpdate {
                client_id: id,
                params: dense(rows, cols, &mut r, coarse),
                sample_count: 10,
            })
            .collect();
        let global = dense(rows, cols, &mut r, coarse);
        let m = r.random_range(1..=(clients - 1) / 2);
        let malicious: BTreeSet<usize> = (0..m).collect();
        let p = r.random_range(0.001..=1.0);
        let mask = generate_mask(&updates, &malicious, &global, p, RankMode::Magnitude).unwrap();
        let mal: Vec<&ModelParams> = updates[..m].iter().map(|u| &u.params).collect();
        let ben: Vec<&ModelParams> = updates[m..].iter().map(|u| &u.params).collect();
        let expected = mask_oracle(&oracle_mean(&mal), &oracle_mean(&ben), &global.cast(), p);
        if mask.layers.len() != 1 || mask.layers[0].indices != expected[0].1 {
            mismatches += 1;
        }
        if mask.layers[0].indices.len() != ceil_count(p, rows * cols) {
            sparsity_errors += 1;
        }
        let magnitude = malicious_magnitude_mask(&updates[0].params, p).unwrap();
        let ranks: Vec<f64> = updates[0].params.layers[0]
            .weights
            .iter()
            .map(|w| f64::from(w.abs()))
            .collect();
        if magnitude.layers[0].indices != full_sort_top_k(&ranks, ceil_count(p, ranks.len())) {
            mismatches += 1;
        }
    }

    let mut invariance_failures = 0;
    for trial in 0..1000u64 {
        let dims = (
            r.random_range(1..6),
            r.random_range(1..30),
            r.random_range(1..30),
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..4),
        );
        let mut t = rng::from_seed(trial);
        let mut draw = || t.random_range(-4i32..=4) as f64;
        let mal = three_kind_model(dims, &mut draw);
        let ben = three_kind_model(dims, &mut draw);
        let glob = three_kind_model(dims, &mut draw);
        let p = r.random_range(0.001..=1.0);
        let base = mask_from_averages(&mal, &ben, &glob, p, RankMode::Magnitude).unwrap();
        let shift = r.random_range(-50i32..=50) as f64;
        let scale = 2f64.powi(r.random_range(-10..=10));
        let map = |m: &ModelParams<f64>, f: &dyn Fn(f64) -> f64| {
            let mut out = m.clone();
            for l in &mut out.layers {
                l.weights.iter_mut().for_each(|w| *w = f(*w));
            }
            out
        };
        let shifted = mask_from_averages(
            &map(&mal, &|w| w + shift),
            &map(&ben, &|w| w + shift),
            &glob,
            p,
            RankMode::Magnitude,
        )
        .unwrap();
        let scaled = mask_from_averages(
            &map(&mal, &|w| w * scale),
            &map(&ben, &|w| w * scale),
            &map(&glob, &|w| w * scale),
            p,
            RankMode::Magnitude,
        )
        .unwrap();
        if shifted != base || scaled != base {
            invariance_failures += 1;
        }
    }
    verdict(
        mismatches == 0 && sparsity_errors == 0 && invariance_failures == 0,
        format!(
            "100 layers up to {largest} weights: {mismatches} oracle mismatches, {sparsity_errors} sparsity errors; 1000 invariance trials: {invariance_failures} failures"
        ),
    )
}

fn a6() -> Verdict {
    let mut rl = RateLimiter::new(10);
    let mut fired = Vec::new();
    let mut unlearned = BTreeSet::new();
    let detected: BTreeSet<usize> = (1..=100).collect();
    let mut round = 0u64;
    while round < 100 || !rl.pending.is_empty() {
        round += 1;
        let new = (round <= 100).then_some(round as usize);
        if let Some(batch) = rl.step(round, new) {
            fired.push(round);
            unlearned.extend(batch);
        }
    }
    let min_gap = fired
        .windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .unwrap_or(u64::MAX);
    verdict(
        min_gap >= 10 && unlearned == detected,
        format!(
            "{} unlearn events at {fired:?}, min gap {min_gap}, {}/100 detections unlearned",
            fired.len(),
            unlearned.len()
        ),
    )
}

fn a7() -> Verdict {
    let cfg = config("backdoor.json", &[]);
    let bytes = fedup_core::harness::storage_report(&cfg)
        .unwrap()
        .model_bytes;
    let s20 = StorageModel::new(10, 20, bytes);
    let s100 = StorageModel::new(10, 100, bytes);
    let ratio = s20.ratio();
    let pass = s20.fedup_bytes == s100.fedup_bytes && (ratio - 200.0 / 11.0).abs() <= 1e-12;
    verdict(
        pass,
        format!(
            "model {bytes} B, fedup {} B at 20 and 100 rounds, historical/fedup {ratio:.4} (200/11 = {:.4}; reference 20)",
            s20.fedup_bytes,
            200.0 / 11.0
        ),
    )
}

fn a8() -> Verdict {
    let mut ok = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = config(
            "backdoor.json",
            &[
                "attack=null",
                "malicious_ids=[]",
                r#"detections=[{"round":20,"client":5}]"#,
            ],
        );
        let report = run(cfg, seed);
        let u = first_unlearn(&report);
        let bound = u.bound.unwrap();
        let pass = u.recovery_rounds <= bound
            && (u.test_acc_after - u.test_acc_before).abs() <= 0.03
            && u.forgotten_acc_after >= u.test_acc_after;
        ok.push(pass);
        lines.push(format!(
            "seed {seed}: test {:.3}->{:.3} in {}/{bound} rounds, removed-client data {:.3}->{:.3} {}",
            u.test_acc_before,
            u.test_acc_after,
            u.recovery_rounds,
            u.forgotten_acc_before,
            u.forgotten_acc_after,
            if pass { "ok" } else { "miss" }
        ));
    }
    verdict(
        count(&ok) >= 2,
        format!("{}/3 seeds; {}", count(&ok), lines.join("; ")),
    )
}

fn a9() -> Verdict {
    let mut worst_grad = 0.0f64;
    let mut checked = 0;
    for spec in oracle_specs() {
        let mut n = 0;
        for seed in 0..1000u64 {
            let (model, batch) = random_problem(&spec, seed, 3);
            if kink_margin(&model, &batch) < 0.01 {
                continue;
            }
            worst_grad = worst_grad.max(max_gradient_error(&model, &batch, 1e-3));
            n += 1;
            if n == 20 {
                break;
            }
        }
        checked += n;
    }

    let mut r = rng::from_seed(9);
    let mut worst_avg = 0.0f64;
    for trial in 0..20 {
        let updates: Vec<ClientUpdate<f64>> = (0..2 + trial % 8)
            .map(|id| {
                let mut params = oracle_specs()[0].init(id as u64).unwrap().cast::<f64>();
                for l in &mut params.layers {
                    l.weights
                        .iter_mut()
                        .for_each(|w| *w = r.random_range(-2.0..2.0));
                }
                ClientUpdate {
                    client_id: id,
                    params,
                    sample_count: r.random_range(1..100),
                }
            })
            .collect();
        let avg = fedavg(&updates, Weighting::BySampleCount).unwrap();
        let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
        for (li, layer) in avg.layers.iter().enumerate() {
            for (i, v) in layer.weights.iter().enumerate() {
                let naive: f64 = updates
                    .iter()
                    .map(|u| u.params.layers[li].weights[i] * u.sample_count as f64)
                    .sum::<f64>()
                    / total;
                worst_avg = worst_avg.max((v - naive).abs() / naive.abs().max(1e-300));
            }
        }
    }

    let mut cfg = config("backdoor.json", &[]);
    cfg.execution = Execution::Parallel;
    let a = run(cfg.clone(), 0);
    let b = run(cfg.clone(), 0);
    cfg.execution = Execution::Sequential;
    let c = run(cfg, 0);
    let identical = a == b && a == c;

    verdict(
        worst_grad < 1e-4 && checked == 60 && worst_avg <= 1e-12 && identical,
        format!(
            "gradient max rel err {worst_grad:.2e} over {checked} problems; fedavg max rel err {worst_avg:.2e}; repeated/sequential/parallel runs identical: {identical}"
        ),
    )
}

fn a10() -> Verdict {
    let mut wrong = Vec::new();
    for n in 2..=20usize {
        for m in 0..=n {
            for flag in [false, true] {
                let ids = format!("malicious_ids={:?}", (0..m).collect::<Vec<_>>());
                let flag_override = format!("allow_majority_violation={flag}");
                // A degenerate dataset: anything past the guard fails with a
                // config error, so a majority error proves the guard ran first.
                let cfg = config(
                    "backdoor.json",
                    &[
                        &format!("client_count={n}"),
                        &ids,
                        &flag_override,
                        "detections=[]",
                        "dataset.train_per_class=0",
                    ],
                );
                let got = run_experiment(&cfg).unwrap_err().category();
                let expect_reject = m >= n.div_ceil(2) && !flag;
                if (got == ErrorCategory::Majority) != expect_reject {
                    wrong.push((n, m, flag, got));
                }
            }
        }
    }
    verdict(
        wrong.is_empty(),
        format!("client counts 2..=20, every malicious count, with and without the flag; mismatches {wrong:?}"),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
        ("A10", a10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == name) {
            continue;
        }
        let v = check();
        println!(
            "{name} {} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
