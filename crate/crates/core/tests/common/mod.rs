//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use fedup_core::nn::{forward, loss_and_gradient, Batch, LayerKind, ModelParams, ModelSpec};
use fedup_core::rng;
use rand::Rng as _;

/// Small architectures covering every layer kind.
pub fn oracle_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Mlp {
            input_dim: 6,
            hidden: vec![5, 4],
            num_classes: 3,
            input_affine: true,
        },
        ModelSpec::Mlp {
            input_dim: 4,
            hidden: vec![],
            num_classes: 3,
            input_affine: false,
        },
        ModelSpec::Conv {
            channels: 2,
            height: 5,
            width: 4,
            filters: 3,
            kernel: 3,
            num_classes: 4,
        },
    ]
}

/// A model with every parameter (biases and affine terms included) drawn
/// away from zero, and a matching random batch.
pub fn random_problem(spec: &ModelSpec, seed: u64, batch: usize) -> (ModelParams<f64>, Batch) {
    let mut r = rng::from_seed(seed);
    let mut model = spec.init(seed).unwrap().cast::<f64>();
    for layer in &mut model.layers {
        for b in &mut layer.biases {
            *b = r.random_range(-0.5..0.5);
        }
        if layer.kind == LayerKind::Other {
            for w in &mut layer.weights {
                *w = r.random_range(0.5..1.5);
            }
        }
    }
    let shape = spec.input_shape();
    let per: usize = shape.iter().product();
    let inputs = (0..batch * per)
        .map(|_| r.random_range(-1.0f32..1.0))
        .collect();
    let labels = (0..batch)
        .map(|_| r.random_range(0..spec.num_classes()))
        .collect();
    (model, Batch::new(inputs, shape, labels).unwrap())
}

fn loss(model: &ModelParams<f64>, batch: &Batch) -> f64 {
    loss_and_gradient(model, batch).unwrap().0
}

fn param(m: &mut ModelParams<f64>, layer: usize, bias: bool, i: usize) -> &mut f64 {
    if bias {
        &mut m.layers[layer].biases[i]
    } else {
        &mut m.layers[layer].weights[i]
    }
}

/// Largest relative error between the analytic gradient and a central
/// difference with step `h`, over every weight and bias.
pub fn max_gradient_error(model: &ModelParams<f64>, batch: &Batch, h: f64) -> f64 {
    let (_, mut grad) = loss_and_gradient(model, batch).unwrap();
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for li in 0..model.layers.len() {
        for bias in [false, true] {
            let len = if bias {
                model.layers[li].biases.len()
            } else {
                model.layers[li].weights.len()
            };
            for i in 0..len {
                let original = *param(&mut probe, li, bias, i);
                *param(&mut probe, li, bias, i) = original + h;
                let up = loss(&probe, batch);
                *param(&mut probe, li, bias, i) = original - h;
                let down = loss(&probe, batch);
                *param(&mut probe, li, bias, i) = original;
                let numeric = (up - down) / (2.0 * h);
                let analytic = *param(&mut grad, li, bias, i);
                let scale = numeric.abs().max(analytic.abs()).max(1e-6);
                worst = worst.max((numeric - analytic).abs() / scale);
            }
        }
    }
    worst
}

/// Straight-line forward pass written from the layer definitions, with no
/// code shared with the crate's kernels.
pub fn naive_logits(model: &ModelParams<f64>, batch: &Batch) -> Vec<f64> {
    naive_forward(model, batch).0
}

/// Smallest distance of any ReLU input to the kink at zero. A central
/// difference is only meaningful when no perturbation crosses it.
pub fn kink_margin(model: &ModelParams<f64>, batch: &Batch) -> f64 {
    naive_forward(model, batch).1
}

fn naive_forward(model: &ModelParams<f64>, batch: &Batch) -> (Vec<f64>, f64) {
    let mut margin = f64::INFINITY;
    let per: usize = batch.sample_shape.iter().product();
    let mut out = Vec::new();
    for b in 0..batch.len() {
        let mut x: Vec<f64> = batch.inputs[b * per..(b + 1) * per]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let mut shape = batch.sample_shape.clone();
        let last = model.layers.len() - 1;
        for (li, layer) in model.layers.iter().enumerate() {
            let mut y = match layer.kind {
                LayerKind::Dense => {
                    let (o, n) = (layer.shape[0], layer.shape[1]);
                    shape = vec![o];
                    (0..o)
                        .map(|r| {
                            layer.biases[r]
                                + (0..n).map(|c| layer.weights[r * n + c] * x[c]).sum::<f64>()
                        })
                        .collect::<Vec<_>>()
                }
                LayerKind::Conv2d => {
                    let (f, c, k) = (layer.shape[0], layer.shape[1], layer.shape[2]);
                    let (h, w) = (shape[1], shape[2]);
                    let (oh, ow) = (h - k + 1, w - k + 1);
                    let mut y = vec![0.0; f * oh * ow];
                    for fi in 0..f {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = layer.biases[fi];
                                for ci in 0..c {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let wv =
                                                layer.weights[((fi * c + ci) * k + ky) * k + kx];
                                            let xv = x[(ci * h + oy + ky) * w + ox + kx];
                                            acc += wv * xv;
                                        }
                                    }
                                }
                                y[(fi * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                    shape = vec![f, oh, ow];
                    y
                }
                LayerKind::Other => {
                    let n = layer.shape[0];
                    x.iter()
                        .enumerate()
                        .map(|(i, v)| layer.weights[i % n] * v + layer.biases[i % n])
                        .collect()
                }
            };
            if li != last && layer.kind != LayerKind::Other {
                margin = y.iter().fold(margin, |m, v| m.min(v.abs()));
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        out.extend(x);
    }
    (out, margin)
}

pub fn crate_logits(model: &ModelParams<f64>, batch: &Batch) -> Vec<f64> {
    forward(model, batch).unwrap()
}

/// Indices of the `k` largest entries by a full stable sort: value
/// descending, index ascending on ties.
pub fn full_sort_top_k(rank: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rank.len()).collect();
    order.sort_by(|&a, &b| rank[b].total_cmp(&rank[a]).then(a.cmp(&b)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    top
}

/// Mask oracle: squared divergence times the reference magnitude, fully
/// sorted per prunable layer.
pub fn mask_oracle(
    avg_mal: &ModelParams<f64>,
    avg_ben: &ModelParams<f64>,
    global: &ModelParams<f64>,
    p: f64,
) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for (li, layer) in global.layers.iter().enumerate() {
        if !layer.kind.is_prunable() {
            continue;
        }
        let rank: Vec<f64> = (0..layer.weights.len())
            .map(|i| {
                let d = avg_mal.layers[li].weights[i] - avg_ben.layers[li].weights[i];
                d * d * layer.weights[i].abs()
            })
            .collect();
        let k = ceil_count(p, rank.len());
        out.push((li, full_sort_top_k(&rank, k)));
    }
    out
}

/// `⌈p · n⌉` with the same tolerance for binary products the crate uses.
pub fn ceil_count(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Affine, dense and conv layers filled from `draw`, in that order.
pub fn three_kind_model(
    dims: (usize, usize, usize, usize, usize, usize),
    mut draw: impl FnMut() -> f64,
) -> ModelParams<f64> {
    use fedup_core::nn::LayerParams;
    let (a, r, c, f, ch, k) = dims;
    let mut fill = |kind, shape: Vec<usize>| {
        let mut l = LayerParams::<f64>::zeros(kind, shape);
        l.weights.iter_mut().for_each(|w| *w = draw());
        l.biases.iter_mut().for_each(|b| *b = draw());
        l
    };
    let layers = vec![
        fill(LayerKind::Other, vec![a]),
        fill(LayerKind::Dense, vec![r, c]),
        fill(LayerKind::Conv2d, vec![f, ch, k, k]),
    ];
    ModelParams::new(layers).unwrap()
}

/// A fast backdoor scenario: 6 clients, 2 malicious, detections at rounds
/// 3 and 5.
pub fn tiny_config() -> serde_json::Value {
    serde_json::json!({
        "name": "tiny",
        "seed": 1,
        "model": { "type": "mlp", "input_dim": 8, "hidden": [16], "num_classes": 4 },
        "dataset": {
            "source": "synthetic", "num_classes": 4, "dim": 8,
            "train_per_class": 120, "test_per_class": 30, "spread": 1.0, "nuisance_dims": 2
        },
        "client_count": 6,
        "malicious_ids": [0, 1],
        "attack": {
            "kind": "backdoor", "target_class": 0,
            "trigger": { "type": "features", "indices": [6, 7], "value": 6.0 }
        },
        "rounds": 8,
        "local_epochs": 4,
        "detections": [ { "round": 3, "client": 0 }, { "round": 5, "client": 1 } ],
        "rate_limit": 10,
        "retrain_max_rounds": 15
    })
}

pub fn config_from(value: serde_json::Value) -> fedup_core::harness::ExperimentConfig {
    fedup_core::harness::ExperimentConfig::from_json_value(value).unwrap()
}
